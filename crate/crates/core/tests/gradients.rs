//! Reverse-mode gradients of the model's building blocks against central
//! finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use earlykd::attention::attend;
use earlykd::distill::{context_loss, distillation_loss, hint_loss};
use earlykd::model::{ModelConfig, ModelParams, ParamGroup};
use earlykd::numerics::{gradient_check, stable_softmax, Graph, Tensor, Var};
use earlykd::recurrent::{cell_step, encode, BoundCell, CellKind, CellState};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn cell_kind() -> impl Strategy<Value = CellKind> {
    prop_oneof![
        Just(CellKind::Vanilla),
        Just(CellKind::Gru),
        Just(CellKind::Lstm)
    ]
}

fn bound_cell(kind: CellKind, k: usize, r: usize, vars: &[Var]) -> BoundCell {
    let gates = kind.gates();
    BoundCell {
        kind,
        input_size: k,
        hidden_size: r,
        input_weights: (0..gates).map(|i| vars[3 * i]).collect(),
        hidden_weights: (0..gates).map(|i| vars[3 * i + 1]).collect(),
        biases: (0..gates).map(|i| vars[3 * i + 2]).collect(),
    }
}

fn cell_tensors(rng: &mut ChaCha8Rng, kind: CellKind, k: usize, r: usize) -> Vec<Tensor> {
    (0..kind.gates())
        .flat_map(|_| {
            [
                random(rng, &[k, r], 1.0),
                random(rng, &[r, r], 1.0),
                random(rng, &[r], 0.5),
            ]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_cell_step(kind in cell_kind(), seed: u64, b in 1usize..=3, k in 1usize..=5, r in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = kind == CellKind::Lstm;
        let mut inputs = cell_tensors(&mut rng, kind, k, r);
        let p = inputs.len();
        inputs.push(random(&mut rng, &[b, k], 1.0));
        inputs.push(random(&mut rng, &[b, r], 1.0));
        if lstm {
            inputs.push(random(&mut rng, &[b, r], 1.0));
        }
        let target = random(&mut rng, &[b, r], 1.0);
        let err = gradient_check(&inputs, STEP, |g, v| {
            let cell = bound_cell(kind, k, r, &v[..p]);
            let prev = CellState { hidden: v[p + 1], cell: lstm.then(|| v[p + 2]) };
            let next = cell_step(g, &cell, prev, v[p])?;
            let t = g.constant(&target);
            let mut loss = g.mse(next.hidden, t)?;
            if let Some(c) = next.cell {
                let lc = g.mse(c, t)?;
                loss = g.add(loss, lc)?;
            }
            Ok(loss)
        }).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn backprop_through_time(
        kind in cell_kind(),
        n in prop_oneof![Just(1usize), Just(3), Just(7)],
        seed: u64,
        b in 1usize..=3,
        k in 1usize..=4,
        r in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = cell_tensors(&mut rng, kind, k, r);
        let xs: Vec<Tensor> = (0..n).map(|_| random(&mut rng, &[b, k], 1.0)).collect();
        let target = random(&mut rng, &[b, r], 1.0);
        let err = gradient_check(&params, STEP, |g, v| {
            let cell = bound_cell(kind, k, r, v);
            let steps: Vec<Var> = xs.iter().map(|x| g.constant(x)).collect();
            let traj = encode(g, &cell, &steps, None)?;
            let t = g.constant(&target);
            g.mse(traj.last(), t)
        }).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn attention_weight_and_states(seed: u64, b in 1usize..=3, n in 1usize..=7, r in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = vec![random(&mut rng, &[r, r], 1.5)];
        inputs.extend((0..n).map(|_| random(&mut rng, &[b, r], 1.0)));
        let target = random(&mut rng, &[b, r], 1.0);
        let err = gradient_check(&inputs, STEP, |g, v| {
            let out = attend(g, &v[1..], v[0])?;
            let t = g.constant(&target);
            g.mse(out.context, t)
        }).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn hint_and_context_losses(seed: u64, b in 1usize..=4, r in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher = random(&mut rng, &[b, r], 1.0);
        let inputs = vec![random(&mut rng, &[b, r], 1.0)];
        let hint = gradient_check(&inputs, STEP, |g, v| {
            let t = g.constant(&teacher);
            hint_loss(g, t, v[0])
        }).unwrap();
        let context = gradient_check(&inputs, STEP, |g, v| {
            let t = g.constant(&teacher);
            context_loss(g, t, v[0])
        }).unwrap();
        prop_assert!(hint < TOL && context < TOL, "hint {hint}, context {context}");
    }

    #[test]
    fn distillation_loss_wrt_logits(seed: u64, b in 1usize..=4, lambda in 0.0f64..2.0, soft: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut p = Vec::new();
        for _ in 0..b {
            y.extend(if rng.random_bool(0.5) { [1.0, 0.0] } else { [0.0, 1.0] });
            p.extend(stable_softmax(&[rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).unwrap());
        }
        let y = Tensor::new(vec![b, 2], y).unwrap();
        let p = Tensor::new(vec![b, 2], p).unwrap();
        let inputs = vec![random(&mut rng, &[b, 2], 4.0)];
        let err = gradient_check(&inputs, STEP, |g, v| {
            let (yv, pv) = (g.constant(&y), g.constant(&p));
            distillation_loss(g, yv, v[0], soft.then_some(pv), lambda)
        }).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn whole_model_distillation_objective() {
    // every parameter group of a full student through the phase-3 objective
    for (i, kind) in [CellKind::Vanilla, CellKind::Gru, CellKind::Lstm]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let config = ModelConfig::new(kind, 3, 4, 3);
        let mut params = ModelParams::init(config, i as u64).unwrap();
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let tensors: Vec<Tensor> = ParamGroup::ALL
            .iter()
            .flat_map(|&g| params.group(g).into_iter().cloned().collect::<Vec<_>>())
            .collect();
        let xs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[2, 4], 1.0)).collect();
        let y = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = Tensor::new(vec![2, 2], vec![0.7, 0.3, 0.2, 0.8]).unwrap();
        let err = gradient_check(&tensors, STEP, |g, v| {
            let bound = rebind(&params, g, v);
            let steps: Vec<Var> = xs.iter().map(|x| g.constant(x)).collect();
            let out = bound.forward(g, &steps)?;
            let (yv, pv) = (g.constant(&y), g.constant(&p));
            distillation_loss(g, yv, out.logits, Some(pv), 0.5)
        })
        .unwrap();
        assert!(err < TOL, "{kind}: relative error {err}");
    }
}

/// Rebinds `params` so its leaves are the checker's variables, in group order.
fn rebind(params: &ModelParams, g: &mut Graph, vars: &[Var]) -> earlykd::model::BoundModel {
    let mut bound = params.bind(g, &[]);
    let enc = bound.encoder.vars().len();
    let gates = bound.encoder.kind.gates();
    for gate in 0..gates {
        bound.encoder.input_weights[gate] = vars[3 * gate];
        bound.encoder.hidden_weights[gate] = vars[3 * gate + 1];
        bound.encoder.biases[gate] = vars[3 * gate + 2];
    }
    bound.attention = vars[enc];
    bound.head.hidden_weight = vars[enc + 1];
    bound.head.hidden_bias = vars[enc + 2];
    bound.head.output_weight = vars[enc + 3];
    bound.head.output_bias = vars[enc + 4];
    bound
}
