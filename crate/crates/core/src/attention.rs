//! Bilinear attention over time steps keyed on the final hidden state.
//!
//! For a trajectory `h_1..h_n`: `e_i = h_nᵀ W h_i`, `α = softmax(e)`,
//! `C = Σ α_i h_i`. The final step's own score takes part in the softmax.
//! No `1/√r` scaling is applied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Square `r x r` bilinear form.
    pub weight: Tensor,
}

impl AttentionParams {
    pub fn zeros(hidden_size: usize) -> Self {
        AttentionParams {
            weight: Tensor::zeros(&[hidden_size, hidden_size]),
        }
    }

    pub fn xavier<R: Rng + ?Sized>(hidden_size: usize, rng: &mut R) -> Self {
        AttentionParams {
            weight: Tensor::xavier(hidden_size, hidden_size, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn validate(&self, hidden_size: usize) -> Result<()> {
        if self.weight.shape() != [hidden_size, hidden_size] {
            return Err(Error::Shape {
                op: "attention weight",
                left: self.weight.shape().to_vec(),
                right: vec![hidden_size, hidden_size],
            });
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, track: bool) -> Var {
        if track {
            g.param(&self.weight)
        } else {
            g.constant(&self.weight)
        }
    }
}

/// Recorded attention intermediates for a batch.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// `[batch x n]` alignment scores.
    pub scores: Var,
    /// `[batch x n]` softmax weights.
    pub weights: Var,
    /// `[batch x r]` context vectors.
    pub context: Var,
}

/// `e_i = h_nᵀ W h_i` for every step, as a `[batch x n]` matrix.
pub fn alignment_scores(g: &mut Graph, hidden: &[Var], weight: Var) -> Result<Var> {
    let key = *hidden
        .last()
        .ok_or_else(|| Error::invalid("attention over an empty trajectory"))?;
    let r = g.shape(key)?[1];
    let ws = g.shape(weight)?;
    if ws != [r, r] {
        return Err(Error::Shape {
            op: "alignment_scores",
            left: ws.to_vec(),
            right: vec![r, r],
        });
    }
    // Row form: h_nᵀ W h_i == sum((h_n W) ⊙ h_i).
    let query = g.matmul(key, weight)?;
    let mut scores = Vec::with_capacity(hidden.len());
    for &h in hidden {
        let prod = g.mul(query, h)?;
        scores.push(g.sum_rows(prod)?);
    }
    g.concat_cols(&scores)
}

pub fn attention_weights(g: &mut Graph, scores: Var) -> Result<Var> {
    g.softmax_rows(scores)
}

/// `C = Σ α_i h_i`.
pub fn context_vector(g: &mut Graph, weights: Var, hidden: &[Var]) -> Result<Var> {
    let shape = g.shape(weights)?;
    let n = *shape.last().unwrap_or(&0);
    if n != hidden.len() || hidden.is_empty() {
        return Err(Error::Shape {
            op: "context_vector",
            left: shape.to_vec(),
            right: vec![hidden.len()],
        });
    }
    let mut acc: Option<Var> = None;
    for (i, &h) in hidden.iter().enumerate() {
        let a = g.column(weights, i)?;
        let term = g.mul_col(h, a)?;
        acc = Some(match acc {
            None => term,
            Some(s) => g.add(s, term)?,
        });
    }
    Ok(acc.expect("nonempty"))
}

pub fn attend(g: &mut Graph, hidden: &[Var], weight: Var) -> Result<AttentionVars> {
    let scores = alignment_scores(g, hidden, weight)?;
    let weights = attention_weights(g, scores)?;
    let context = context_vector(g, weights, hidden)?;
    Ok(AttentionVars {
        scores,
        weights,
        context,
    })
}

/// Attention results for a single trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

/// Single-trajectory attention on plain vectors.
pub fn attend_values(hidden: &[Vec<f64>], params: &AttentionParams) -> Result<AttentionOutput> {
    let r = params.hidden_size();
    let mut g = Graph::new();
    let w = params.bind(&mut g, false);
    let vars = hidden
        .iter()
        .map(|h| g.constant_from(vec![1, r], h.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = attend(&mut g, &vars, w)?;
    Ok(AttentionOutput {
        scores: g.value(out.scores)?.to_vec(),
        weights: g.value(out.weights)?.to_vec(),
        context: g.value(out.context)?.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r: usize, w: &[f64]) -> AttentionParams {
        AttentionParams {
            weight: Tensor::new(vec![r, r], w.to_vec()).unwrap(),
        }
    }

    #[test]
    fn identity_form_on_orthogonal_states() {
        let hidden = vec![vec![0.0, 3.0], vec![2.0, 0.0]];
        let out = attend_values(
            &hidden,
            &AttentionParams {
                weight: Tensor::identity(2),
            },
        )
        .unwrap();
        assert_eq!(out.scores, vec![0.0, 4.0]);
    }

    #[test]
    fn zero_form_gives_zero_scores_and_uniform_weights() {
        let hidden = vec![vec![0.1, 0.2], vec![0.3, -0.4], vec![0.5, 0.6]];
        let out = attend_values(&hidden, &AttentionParams::zeros(2)).unwrap();
        assert_eq!(out.scores, vec![0.0; 3]);
        for a in &out.weights {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_worked_bilinear_score() {
        // h_n = [1, 0], h_i = [0, 1], W = [[0, 2], [0, 0]]
        let hidden = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let out = attend_values(&hidden, &params(2, &[0.0, 2.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.scores[0], 2.0);
        assert_eq!(out.scores[1], 0.0);
    }

    #[test]
    fn weights_from_closed_form_scores() {
        let mut g = Graph::new();
        let e = g.constant_from(vec![1, 2], vec![0.0, 3f64.ln()]).unwrap();
        let a = attention_weights(&mut g, e).unwrap();
        let v = g.value(a).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

        let e = g.constant_from(vec![1, 3], vec![0.0, 800.0, -3.0]).unwrap();
        let a = attention_weights(&mut g, e).unwrap();
        let v = g.value(a).unwrap();
        assert!(v[1] > 1.0 - 1e-12);
    }

    #[test]
    fn one_hot_weights_select_a_state() {
        let hidden = [
            vec![0.1, 0.2, 0.3],
            vec![-0.5, 0.9, 0.0],
            vec![0.7, 0.7, -0.1],
        ];
        let mut g = Graph::new();
        let vars: Vec<Var> = hidden
            .iter()
            .map(|h| g.constant_from(vec![1, 3], h.clone()).unwrap())
            .collect();
        let a = g.constant_from(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let c = context_vector(&mut g, a, &vars).unwrap();
        assert_eq!(g.value(c).unwrap(), hidden[1].as_slice());
    }

    #[test]
    fn identical_states_give_that_state() {
        let h = vec![0.25, -0.5, 0.125, 1.0];
        let hidden = vec![h.clone(); 4];
        let out = attend_values(&hidden, &params(4, &[0.3; 16])).unwrap();
        for (c, x) in out.context.iter().zip(&h) {
            assert!((c - x).abs() < 1e-15);
        }
    }

    #[test]
    fn context_matches_hand_summation() {
        let hidden = [
            vec![0.1, -0.2, 0.3, 0.4],
            vec![0.5, 0.6, -0.7, 0.8],
            vec![-0.9, 0.15, 0.25, -0.35],
        ];
        let alpha = [0.2, 0.3, 0.5];
        let mut g = Graph::new();
        let vars: Vec<Var> = hidden
            .iter()
            .map(|h| g.constant_from(vec![1, 4], h.clone()).unwrap())
            .collect();
        let a = g.constant_from(vec![1, 3], alpha.to_vec()).unwrap();
        let c = context_vector(&mut g, a, &vars).unwrap();
        let expected = [
            0.2 * 0.1 + 0.3 * 0.5 + 0.5 * -0.9,
            0.2 * -0.2 + 0.3 * 0.6 + 0.5 * 0.15,
            0.2 * 0.3 + 0.3 * -0.7 + 0.5 * 0.25,
            0.2 * 0.4 + 0.3 * 0.8 + 0.5 * -0.35,
        ];
        for (x, y) in g.value(c).unwrap().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors() {
        let hidden = vec![vec![0.1, 0.2, 0.3]];
        assert!(attend_values(&hidden, &AttentionParams::zeros(2)).is_err());
        assert!(attend_values(&[], &AttentionParams::zeros(2)).is_err());

        let mut g = Graph::new();
        let h = g.constant_from(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let a = g.constant_from(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(context_vector(&mut g, a, &[h]).is_err());
    }
}
