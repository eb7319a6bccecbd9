//! Vanilla RNN, GRU and LSTM cells plus uni- and bidirectional encoders.
//!
//! All operations work on mini-batches: an input step is a `[batch x k]`
//! matrix and a hidden state is `[batch x r]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Vanilla => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Vanilla => "vanilla",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "rnn" => Ok(CellKind::Vanilla),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            _ => Err(Error::unknown("cell kind", s)),
        }
    }
}

// Gate layout:
//   vanilla: [candidate]
//   gru:     [update, reset, candidate]
//   lstm:    [input, forget, output, candidate]
const GRU_UPDATE: usize = 0;
const GRU_RESET: usize = 1;
const GRU_CAND: usize = 2;
const LSTM_INPUT: usize = 0;
const LSTM_FORGET: usize = 1;
const LSTM_OUTPUT: usize = 2;
const LSTM_CAND: usize = 3;

/// Per-gate weights of a recurrent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    /// `k x r` per gate.
    pub input_weights: Vec<Tensor>,
    /// `r x r` per gate.
    pub hidden_weights: Vec<Tensor>,
    /// length `r` per gate.
    pub biases: Vec<Tensor>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_size: usize, hidden_size: usize) -> Self {
        let n = kind.gates();
        CellParams {
            kind,
            input_size,
            hidden_size,
            input_weights: vec![Tensor::zeros(&[input_size, hidden_size]); n],
            hidden_weights: vec![Tensor::zeros(&[hidden_size, hidden_size]); n],
            biases: vec![Tensor::zeros(&[hidden_size]); n],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(
        kind: CellKind,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(kind, input_size, hidden_size);
        for gate in 0..kind.gates() {
            p.input_weights[gate] = Tensor::xavier(input_size, hidden_size, rng);
            p.hidden_weights[gate] = Tensor::xavier(hidden_size, hidden_size, rng);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kind.gates();
        if self.input_weights.len() != n || self.hidden_weights.len() != n || self.biases.len() != n
        {
            return Err(Error::invalid(format!(
                "{} cell needs {n} gates",
                self.kind
            )));
        }
        let (k, r) = (self.input_size, self.hidden_size);
        for gate in 0..n {
            check_shape("input weights", &self.input_weights[gate], &[k, r])?;
            check_shape("hidden weights", &self.hidden_weights[gate], &[r, r])?;
            check_shape("bias", &self.biases[gate], &[r])?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Tensors in canonical order: for each gate, input weights, hidden
    /// weights, bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(3 * self.kind.gates());
        for gate in 0..self.kind.gates() {
            out.push(&self.input_weights[gate]);
            out.push(&self.hidden_weights[gate]);
            out.push(&self.biases[gate]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.input_weights
            .iter_mut()
            .zip(self.hidden_weights.iter_mut())
            .zip(self.biases.iter_mut())
            .flat_map(|((x, h), b)| [x, h, b])
            .collect()
    }

    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.kind.gates())
            .flat_map(|gate| {
                ["input_weights", "hidden_weights", "bias"]
                    .map(|n| format!("{prefix}.gate{gate}.{n}"))
            })
            .collect()
    }

    /// Records the parameters in `g`; `track` controls gradient tracking.
    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundCell {
        let mut leaf = |t: &Tensor| if track { g.param(t) } else { g.constant(t) };
        let input_weights = self.input_weights.iter().map(&mut leaf).collect();
        let hidden_weights = self.hidden_weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        BoundCell {
            kind: self.kind,
            input_size: self.input_size,
            hidden_size: self.hidden_size,
            input_weights,
            hidden_weights,
            biases,
        }
    }
}

fn check_shape(what: &'static str, t: &Tensor, expected: &[usize]) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Shape {
            op: what,
            left: t.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    Ok(())
}

/// Cell parameters recorded in a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundCell {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub input_weights: Vec<Var>,
    pub hidden_weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl BoundCell {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for gate in 0..self.kind.gates() {
            out.push(self.input_weights[gate]);
            out.push(self.hidden_weights[gate]);
            out.push(self.biases[gate]);
        }
        out
    }

    fn gate_pre(&self, g: &mut Graph, gate: usize, x: Var, h: Var) -> Result<Var> {
        let xw = g.matmul(x, self.input_weights[gate])?;
        let hw = g.matmul(h, self.hidden_weights[gate])?;
        let s = g.add(xw, hw)?;
        g.add_row(s, self.biases[gate])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub hidden: Var,
    /// LSTM memory cell; `None` for other kinds.
    pub cell: Option<Var>,
}

fn check_batch(g: &Graph, v: Var, cols: usize, what: &'static str) -> Result<usize> {
    let shape = g.shape(v)?;
    if shape.len() != 2 || shape[1] != cols {
        return Err(Error::Shape {
            op: what,
            left: shape.to_vec(),
            right: vec![cols],
        });
    }
    Ok(shape[0])
}

/// One recurrence step.
///
/// * vanilla: `h' = tanh(x Wx + h Wh + b)`
/// * GRU: `z = σ(..)`, `r = σ(..)`, `n = tanh(x Wxn + (r ⊙ h) Whn + bn)`,
///   `h' = z ⊙ h + (1 - z) ⊙ n`
/// * LSTM: `c' = f ⊙ c + i ⊙ tanh(..)`, `h' = o ⊙ tanh(c')`
pub fn cell_step(g: &mut Graph, cell: &BoundCell, prev: CellState, x: Var) -> Result<CellState> {
    let bx = check_batch(g, x, cell.input_size, "cell_step input")?;
    let bh = check_batch(g, prev.hidden, cell.hidden_size, "cell_step hidden")?;
    if bx != bh {
        return Err(Error::Shape {
            op: "cell_step batch",
            left: vec![bx],
            right: vec![bh],
        });
    }
    let h = prev.hidden;
    match cell.kind {
        CellKind::Vanilla => {
            let pre = cell.gate_pre(g, 0, x, h)?;
            Ok(CellState {
                hidden: g.tanh(pre)?,
                cell: None,
            })
        }
        CellKind::Gru => {
            let zp = cell.gate_pre(g, GRU_UPDATE, x, h)?;
            let z = g.sigmoid(zp)?;
            let rp = cell.gate_pre(g, GRU_RESET, x, h)?;
            let r = g.sigmoid(rp)?;
            let rh = g.mul(r, h)?;
            let np = cell.gate_pre(g, GRU_CAND, x, rh)?;
            let n = g.tanh(np)?;
            let keep = g.mul(z, h)?;
            let one_minus_z = g.affine(z, -1.0, 1.0)?;
            let fresh = g.mul(one_minus_z, n)?;
            Ok(CellState {
                hidden: g.add(keep, fresh)?,
                cell: None,
            })
        }
        CellKind::Lstm => {
            let c = prev
                .cell
                .ok_or_else(|| Error::invalid("LSTM step needs a previous cell state"))?;
            check_batch(g, c, cell.hidden_size, "cell_step memory")?;
            let ip = cell.gate_pre(g, LSTM_INPUT, x, h)?;
            let i = g.sigmoid(ip)?;
            let fp = cell.gate_pre(g, LSTM_FORGET, x, h)?;
            let f = g.sigmoid(fp)?;
            let op = cell.gate_pre(g, LSTM_OUTPUT, x, h)?;
            let o = g.sigmoid(op)?;
            let cp = cell.gate_pre(g, LSTM_CAND, x, h)?;
            let cand = g.tanh(cp)?;
            let kept = g.mul(f, c)?;
            let added = g.mul(i, cand)?;
            let c_next = g.add(kept, added)?;
            let squashed = g.tanh(c_next)?;
            Ok(CellState {
                hidden: g.mul(o, squashed)?,
                cell: Some(c_next),
            })
        }
    }
}

/// Recorded hidden (and, for LSTM, memory) states `h_1..h_n`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub hidden: Vec<Var>,
    pub cell: Vec<Var>,
}

impl Trajectory {
    pub fn last(&self) -> Var {
        *self.hidden.last().expect("trajectories are never empty")
    }
}

pub fn zero_state(g: &mut Graph, kind: CellKind, batch: usize, hidden: usize) -> CellState {
    let zeros = Tensor::zeros(&[batch, hidden]);
    let h = g.constant(&zeros);
    let c = (kind == CellKind::Lstm).then(|| g.constant(&zeros));
    CellState { hidden: h, cell: c }
}

/// Runs the cell over `steps` starting from `init` (zeros when `None`).
pub fn encode(
    g: &mut Graph,
    cell: &BoundCell,
    steps: &[Var],
    init: Option<CellState>,
) -> Result<Trajectory> {
    let first = *steps
        .first()
        .ok_or_else(|| Error::invalid("cannot encode an empty sequence"))?;
    let batch = check_batch(g, first, cell.input_size, "encode input")?;
    let mut state = init.unwrap_or_else(|| zero_state(g, cell.kind, batch, cell.hidden_size));
    let mut traj = Trajectory {
        hidden: Vec::with_capacity(steps.len()),
        cell: Vec::new(),
    };
    for &x in steps {
        state = cell_step(g, cell, state, x)?;
        traj.hidden.push(state.hidden);
        if let Some(c) = state.cell {
            traj.cell.push(c);
        }
    }
    Ok(traj)
}

/// Forward pass over `x_1..x_n` and backward pass over `x_n..x_1`; returns
/// `[h_n^fwd ; h_1^bwd]` as a `[batch x 2r]` matrix.
pub fn encode_bidirectional(
    g: &mut Graph,
    forward: &BoundCell,
    backward: &BoundCell,
    steps: &[Var],
) -> Result<Var> {
    if forward.kind != backward.kind {
        return Err(Error::invalid(format!(
            "bidirectional cells differ in kind: {} vs {}",
            forward.kind, backward.kind
        )));
    }
    if forward.hidden_size != backward.hidden_size {
        return Err(Error::Shape {
            op: "encode_bidirectional",
            left: vec![forward.hidden_size],
            right: vec![backward.hidden_size],
        });
    }
    let fwd = encode(g, forward, steps, None)?;
    let reversed: Vec<Var> = steps.iter().rev().copied().collect();
    let bwd = encode(g, backward, &reversed, None)?;
    g.concat_cols(&[fwd.last(), bwd.last()])
}

/// Plain-valued trajectory of a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrajectory {
    pub hidden: Vec<Vec<f64>>,
    pub cell: Option<Vec<Vec<f64>>>,
}

/// Single-sequence [`encode`] from zero initial state, returning values.
pub fn encode_sequence<S: AsRef<[f64]>>(
    params: &CellParams,
    sequence: &[S],
) -> Result<HiddenTrajectory> {
    let mut g = Graph::new();
    let cell = params.bind(&mut g, false);
    let steps = sequence_to_steps(&mut g, sequence, params.input_size)?;
    let traj = encode(&mut g, &cell, &steps, None)?;
    let values = |vars: &[Var]| -> Result<Vec<Vec<f64>>> {
        vars.iter().map(|&v| Ok(g.value(v)?.to_vec())).collect()
    };
    Ok(HiddenTrajectory {
        hidden: values(&traj.hidden)?,
        cell: if traj.cell.is_empty() {
            None
        } else {
            Some(values(&traj.cell)?)
        },
    })
}

/// Records a single sequence as `[1 x k]` constant steps.
pub fn sequence_to_steps<S: AsRef<[f64]>>(
    g: &mut Graph,
    sequence: &[S],
    input_size: usize,
) -> Result<Vec<Var>> {
    sequence
        .iter()
        .map(|x| {
            let x = x.as_ref();
            if x.len() != input_size {
                return Err(Error::Shape {
                    op: "sequence step",
                    left: vec![x.len()],
                    right: vec![input_size],
                });
            }
            g.constant_from(vec![1, input_size], x.to_vec())
        })
        .collect()
}
