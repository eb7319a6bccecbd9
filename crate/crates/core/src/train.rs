//! Mini-batch plumbing and a generic hard-label training loop shared by the
//! teacher, the baselines and the distilled student.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{StudentSequence, NUM_FEATURES};
use crate::model::{predict_label, ModelParams, ParamGroup};
use crate::numerics::{Adam, AdamConfig, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            l2: 1e-5,
            batch_size: 8,
            epochs: 150,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.l2)
    }
}

/// Deterministic per-epoch shuffler. Uses its own ChaCha stream so that
/// shuffling never shares random numbers with weight initialisation.
#[derive(Debug, Clone)]
pub struct Batcher {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Batcher {
            rng,
            order: (0..len).collect(),
            batch_size: batch_size.max(1),
        }
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Records weeks `1..=n` of the selected students as `n` constant
/// `[batch x 12]` step matrices.
pub fn batch_steps(
    g: &mut Graph,
    data: &[StudentSequence],
    idx: &[usize],
    n: usize,
) -> Result<Vec<Var>> {
    (0..n)
        .map(|w| {
            let mut values = Vec::with_capacity(idx.len() * NUM_FEATURES);
            for &i in idx {
                let seq = &data[i];
                let week = seq.weeks.get(w).ok_or_else(|| {
                    Error::invalid(format!(
                        "student `{}` has {} weeks, need {n}",
                        seq.student_id,
                        seq.weeks.len()
                    ))
                })?;
                values.extend_from_slice(week);
            }
            g.constant_from(vec![idx.len(), NUM_FEATURES], values)
        })
        .collect()
}

/// One-hot `[batch x 2]` label matrix.
pub fn batch_labels(g: &mut Graph, data: &[StudentSequence], idx: &[usize]) -> Result<Var> {
    let mut values = Vec::with_capacity(idx.len() * 2);
    for &i in idx {
        if data[i].label == 1 {
            values.extend_from_slice(&[0.0, 1.0]);
        } else {
            values.extend_from_slice(&[1.0, 0.0]);
        }
    }
    g.constant_from(vec![idx.len(), 2], values)
}

/// A model that maps the first `n` weeks of a batch to `[batch x 2]` logits.
pub trait Classifier {
    /// Trainable tensors in a fixed order.
    fn tensors(&self) -> Vec<&Tensor>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records the forward pass. Returns the logits and, when `track` is
    /// set, one tracked variable per entry of [`Classifier::tensors`].
    fn record(&self, g: &mut Graph, steps: &[Var], track: bool) -> Result<(Var, Vec<Var>)>;
}

impl Classifier for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        ParamGroup::ALL
            .iter()
            .flat_map(|&gr| self.group(gr))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        ModelParams::tensors_mut(self)
    }

    fn record(&self, g: &mut Graph, steps: &[Var], track: bool) -> Result<(Var, Vec<Var>)> {
        let tracked: &[ParamGroup] = if track { &ParamGroup::ALL } else { &[] };
        let bound = self.bind(g, tracked);
        let out = bound.forward(g, steps)?;
        let vars = if track {
            ParamGroup::ALL
                .iter()
                .flat_map(|&gr| bound.group_vars(gr))
                .collect()
        } else {
            Vec::new()
        };
        Ok((out.logits, vars))
    }
}

/// Copies gradients from a reverse pass onto the matching tensors.
pub(crate) fn install_grads(
    grads: &crate::numerics::Gradients,
    vars: &[Var],
    tensors: &mut [&mut Tensor],
) -> Result<()> {
    for (v, t) in vars.iter().zip(tensors.iter_mut()) {
        t.set_grad(grads.get(*v)?)?;
    }
    Ok(())
}

pub(crate) fn warn_if_single_class(data: &[StudentSequence]) {
    let positives = data.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == data.len() {
        log::warn!(
            "training set of {} students contains a single class; continuing",
            data.len()
        );
    }
}

/// Minimises mean hard cross-entropy (plus L2 via Adam) over weeks `1..=n`.
/// Returns the mean batch loss of every epoch.
pub fn fit<C: Classifier>(
    model: &mut C,
    data: &[StudentSequence],
    n: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    warn_if_single_class(data);
    let mut adam = Adam::new(config.adam())?;
    let mut batcher = Batcher::new(data.len(), config.batch_size, config.seed);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        let batches = batcher.epoch();
        for idx in &batches {
            let mut g = Graph::new();
            let steps = batch_steps(&mut g, data, idx, n)?;
            let labels = batch_labels(&mut g, data, idx)?;
            let (logits, vars) = model.record(&mut g, &steps, true)?;
            let loss = g.cross_entropy(logits, labels)?;
            total += g.scalar(loss)?;
            let grads = g.backward(loss)?;
            let mut tensors = model.tensors_mut();
            install_grads(&grads, &vars, &mut tensors)?;
            adam.step(&mut tensors)?;
        }
        trace.push(total / batches.len() as f64);
    }
    Ok(trace)
}

/// Raw logits for every sequence using weeks `1..=n`.
pub fn logits<C: Classifier>(
    model: &C,
    data: &[StudentSequence],
    n: usize,
) -> Result<Vec<[f64; 2]>> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut g = Graph::new();
    let steps = batch_steps(&mut g, data, &idx, n)?;
    let (out, _) = model.record(&mut g, &steps, false)?;
    let v = g.value(out)?;
    Ok(v.chunks(2).map(|c| [c[0], c[1]]).collect())
}

pub fn predict<C: Classifier>(model: &C, data: &[StudentSequence], n: usize) -> Result<Vec<u8>> {
    Ok(logits(model, data, n)?
        .iter()
        .map(|z| predict_label(z))
        .collect())
}
