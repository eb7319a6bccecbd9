//! Invariants of the attention layer over random trajectories.

use proptest::prelude::*;

use earlykd::attention::{attend_values, attention_weights, context_vector, AttentionParams};
use earlykd::numerics::{Graph, Tensor};

fn trajectory() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=7, 1usize..=6).prop_flat_map(|(n, r)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, r), n),
            prop::collection::vec(-3.0f64..3.0, r * r),
        )
    })
}

fn params(w: &[f64]) -> AttentionParams {
    let r = (w.len() as f64).sqrt() as usize;
    AttentionParams {
        weight: Tensor::new(vec![r, r], w.to_vec()).unwrap(),
    }
}

fn weights_of(scores: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let s = g
        .constant_from(vec![1, scores.len()], scores.to_vec())
        .unwrap();
    let w = attention_weights(&mut g, s).unwrap();
    g.value(w).unwrap().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_form_a_distribution((hidden, w) in trajectory()) {
        let out = attend_values(&hidden, &params(&w)).unwrap();
        prop_assert_eq!(out.weights.len(), hidden.len());
        prop_assert!((out.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(out.weights.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn context_is_the_weighted_sum((hidden, w) in trajectory()) {
        let out = attend_values(&hidden, &params(&w)).unwrap();
        let r = hidden[0].len();
        let mut expected = vec![0.0; r];
        for (i, h) in hidden.iter().enumerate() {
            for (e, x) in expected.iter_mut().zip(h) {
                *e = if i == 0 { x * out.weights[i] } else { *e + x * out.weights[i] };
            }
        }
        prop_assert_eq!(out.context, expected);
    }

    #[test]
    fn shifting_scores_keeps_weights(scores in prop::collection::vec(-20.0f64..20.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        for (a, b) in weights_of(&scores).iter().zip(weights_of(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn dominant_score_selects_its_state((hidden, _) in trajectory(), pick in any::<prop::sample::Index>()) {
        let n = hidden.len();
        let j = pick.index(n);
        let mut scores = vec![0.0; n];
        scores[j] = 1000.0;
        let mut g = Graph::new();
        let s = g.constant_from(vec![1, n], scores).unwrap();
        let w = attention_weights(&mut g, s).unwrap();
        let hv: Vec<_> = hidden
            .iter()
            .map(|h| g.constant_from(vec![1, h.len()], h.clone()).unwrap())
            .collect();
        let c = context_vector(&mut g, w, &hv).unwrap();
        prop_assert_eq!(g.value(c).unwrap(), hidden[j].as_slice());
    }
}

#[test]
fn single_step_attends_to_itself() {
    let hidden = vec![vec![0.3, -0.7]];
    let out = attend_values(&hidden, &params(&[1.0, 2.0, -1.0, 0.5])).unwrap();
    assert_eq!(out.weights, vec![1.0]);
    assert_eq!(out.context, hidden[0]);
}
