//! Comparison models without attention or distillation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::model::{HeadParams, CLASS_COUNT};
use crate::numerics::{Graph, Tensor, Var};
use crate::recurrent::{encode, encode_bidirectional, CellKind, CellParams};
use crate::train::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Weeks flattened into one `n * 12` vector.
    Mlp,
    Rnn,
    Gru,
    Lstm,
    BiGru,
    BiLstm,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Mlp,
        BaselineKind::Rnn,
        BaselineKind::Gru,
        BaselineKind::Lstm,
        BaselineKind::BiGru,
        BaselineKind::BiLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Mlp => "MLP",
            BaselineKind::Rnn => "RNN",
            BaselineKind::Gru => "GRU",
            BaselineKind::Lstm => "LSTM",
            BaselineKind::BiGru => "Bi-GRU",
            BaselineKind::BiLstm => "Bi-LSTM",
        }
    }

    fn cell(self) -> Option<CellKind> {
        match self {
            BaselineKind::Mlp => None,
            BaselineKind::Rnn => Some(CellKind::Vanilla),
            BaselineKind::Gru | BaselineKind::BiGru => Some(CellKind::Gru),
            BaselineKind::Lstm | BaselineKind::BiLstm => Some(CellKind::Lstm),
        }
    }

    fn bidirectional(self) -> bool {
        matches!(self, BaselineKind::BiGru | BaselineKind::BiLstm)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::unknown("baseline", s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub weeks: usize,
    pub forward: Option<CellParams>,
    pub backward: Option<CellParams>,
    pub head: HeadParams,
}

impl BaselineParams {
    /// Xavier weights from `seed`; `hidden` is both the recurrent width and
    /// the head's hidden width.
    pub fn init(kind: BaselineKind, hidden: usize, weeks: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || weeks == 0 {
            return Err(Error::invalid(
                "baseline needs positive hidden size and weeks",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forward = kind
            .cell()
            .map(|c| CellParams::xavier(c, NUM_FEATURES, hidden, &mut rng));
        let backward = if kind.bidirectional() {
            kind.cell()
                .map(|c| CellParams::xavier(c, NUM_FEATURES, hidden, &mut rng))
        } else {
            None
        };
        let input = match kind {
            BaselineKind::Mlp => weeks * NUM_FEATURES,
            _ if kind.bidirectional() => 2 * hidden,
            _ => hidden,
        };
        let head = HeadParams::xavier(input, hidden, CLASS_COUNT, &mut rng);
        Ok(BaselineParams {
            kind,
            weeks,
            forward,
            backward,
            head,
        })
    }
}

impl Classifier for BaselineParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in self.forward.iter().chain(&self.backward) {
            out.extend(c.tensors());
        }
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in self.forward.iter_mut().chain(self.backward.iter_mut()) {
            out.extend(c.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    fn record(&self, g: &mut Graph, steps: &[Var], track: bool) -> Result<(Var, Vec<Var>)> {
        if steps.len() != self.weeks {
            return Err(Error::invalid(format!(
                "{} baseline was built for {} weeks, got {}",
                self.kind,
                self.weeks,
                steps.len()
            )));
        }
        let fwd = self.forward.as_ref().map(|c| c.bind(g, track));
        let bwd = self.backward.as_ref().map(|c| c.bind(g, track));
        let head = self.head.bind(g, track);
        let features = match (&fwd, &bwd) {
            (None, _) => g.concat_cols(steps)?,
            (Some(f), None) => encode(g, f, steps, None)?.last(),
            (Some(f), Some(b)) => encode_bidirectional(g, f, b, steps)?,
        };
        let logits = head.forward(g, features)?;
        let mut vars = Vec::new();
        if track {
            for c in fwd.iter().chain(&bwd) {
                vars.extend(c.vars());
            }
            vars.extend(head.vars());
        }
        Ok((logits, vars))
    }
}
