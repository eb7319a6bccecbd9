//! The RNN-Attention classifier: recurrent encoder, attention over time
//! steps, and a one-hidden-layer MLP head producing two raw logits.
//!
//! Teacher and student are both instances of [`ModelParams`]; they differ
//! only in how many weeks of input they see.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionOutput, AttentionParams, AttentionVars};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::recurrent::{self, BoundCell, CellKind, CellParams, HiddenTrajectory, Trajectory};

pub const CLASS_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden_size: usize,
    pub feature_count: usize,
    pub class_count: usize,
    /// Weeks of input the model is trained on (`m` for a teacher, `n` for a student).
    pub seq_len: usize,
}

impl ModelConfig {
    pub fn new(cell: CellKind, hidden_size: usize, feature_count: usize, seq_len: usize) -> Self {
        ModelConfig {
            cell,
            hidden_size,
            feature_count,
            class_count: CLASS_COUNT,
            seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count != CLASS_COUNT {
            return Err(Error::invalid(format!(
                "class count must be {CLASS_COUNT}, got {}",
                self.class_count
            )));
        }
        if self.hidden_size == 0 || self.feature_count == 0 || self.seq_len == 0 {
            return Err(Error::invalid(
                "hidden size, feature count and sequence length must be positive",
            ));
        }
        Ok(())
    }

    /// Same architecture, i.e. everything except sequence length agrees.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        self.cell == other.cell
            && self.hidden_size == other.hidden_size
            && self.feature_count == other.feature_count
            && self.class_count == other.class_count
    }
}

/// Two-layer perceptron: `tanh(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub hidden_weight: Tensor,
    pub hidden_bias: Tensor,
    pub output_weight: Tensor,
    pub output_bias: Tensor,
}

impl HeadParams {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        HeadParams {
            hidden_weight: Tensor::zeros(&[input, hidden]),
            hidden_bias: Tensor::zeros(&[hidden]),
            output_weight: Tensor::zeros(&[hidden, classes]),
            output_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn xavier<R: rand::Rng + ?Sized>(
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        HeadParams {
            hidden_weight: Tensor::xavier(input, hidden, rng),
            hidden_bias: Tensor::zeros(&[hidden]),
            output_weight: Tensor::xavier(hidden, classes, rng),
            output_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.hidden_weight,
            &self.hidden_bias,
            &self.output_weight,
            &self.output_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }

    pub fn tensor_names(prefix: &str) -> Vec<String> {
        [
            "hidden_weight",
            "hidden_bias",
            "output_weight",
            "output_bias",
        ]
        .iter()
        .map(|n| format!("{prefix}.{n}"))
        .collect()
    }

    pub fn bind(&self, g: &mut Graph, track: bool) -> BoundHead {
        let mut leaf = |t: &Tensor| if track { g.param(t) } else { g.constant(t) };
        BoundHead {
            hidden_weight: leaf(&self.hidden_weight),
            hidden_bias: leaf(&self.hidden_bias),
            output_weight: leaf(&self.output_weight),
            output_bias: leaf(&self.output_bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHead {
    pub hidden_weight: Var,
    pub hidden_bias: Var,
    pub output_weight: Var,
    pub output_bias: Var,
}

impl BoundHead {
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.hidden_weight,
            self.hidden_bias,
            self.output_weight,
            self.output_bias,
        ]
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let a = g.matmul(input, self.hidden_weight)?;
        let a = g.add_row(a, self.hidden_bias)?;
        let hidden = g.tanh(a)?;
        let z = g.matmul(hidden, self.output_weight)?;
        g.add_row(z, self.output_bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Attention,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::Attention, ParamGroup::Head];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: CellParams,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let r = config.hidden_size;
        ModelParams {
            config,
            encoder: CellParams::zeros(config.cell, config.feature_count, r),
            attention: AttentionParams::zeros(r),
            head: HeadParams::zeros(r, r, config.class_count),
        }
    }

    /// Xavier-initialised parameters, reproducible from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = config.hidden_size;
        Ok(ModelParams {
            config,
            encoder: CellParams::xavier(config.cell, config.feature_count, r, &mut rng),
            attention: AttentionParams::xavier(r, &mut rng),
            head: HeadParams::xavier(r, r, config.class_count, &mut rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.encoder.validate()?;
        if self.encoder.kind != self.config.cell
            || self.encoder.input_size != self.config.feature_count
            || self.encoder.hidden_size != self.config.hidden_size
        {
            return Err(Error::invalid("encoder does not match model config"));
        }
        let r = self.config.hidden_size;
        self.attention.validate(r)?;
        let expected = HeadParams::zeros(r, r, self.config.class_count);
        for (t, e) in self.head.tensors().into_iter().zip(expected.tensors()) {
            if t.shape() != e.shape() {
                return Err(Error::Shape {
                    op: "head",
                    left: t.shape().to_vec(),
                    right: e.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn group(&self, group: ParamGroup) -> Vec<&Tensor> {
        match group {
            ParamGroup::Encoder => self.encoder.tensors(),
            ParamGroup::Attention => vec![&self.attention.weight],
            ParamGroup::Head => self.head.tensors(),
        }
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        match group {
            ParamGroup::Encoder => self.encoder.tensors_mut(),
            ParamGroup::Attention => vec![&mut self.attention.weight],
            ParamGroup::Head => self.head.tensors_mut(),
        }
    }

    /// All tensors, mutably, in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.push(&mut self.attention.weight);
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn group_size(&self, group: ParamGroup) -> usize {
        self.group(group).iter().map(|t| t.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group_size(g)).sum()
    }

    /// Every tensor with its checkpoint name and group, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out = Vec::new();
        for (name, t) in self
            .encoder
            .tensor_names("encoder")
            .into_iter()
            .zip(self.encoder.tensors())
        {
            out.push((name, ParamGroup::Encoder, t));
        }
        out.push((
            "attention.weight".to_string(),
            ParamGroup::Attention,
            &self.attention.weight,
        ));
        for (name, t) in HeadParams::tensor_names("head")
            .into_iter()
            .zip(self.head.tensors())
        {
            out.push((name, ParamGroup::Head, t));
        }
        out
    }

    /// Records the parameters; only groups in `tracked` accumulate gradients.
    pub fn bind(&self, g: &mut Graph, tracked: &[ParamGroup]) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(g, tracked.contains(&ParamGroup::Encoder)),
            attention: self
                .attention
                .bind(g, tracked.contains(&ParamGroup::Attention)),
            head: self.head.bind(g, tracked.contains(&ParamGroup::Head)),
        }
    }

    pub fn forward(&self, sequence: &[impl AsRef<[f64]>]) -> Result<ForwardOutput> {
        forward(self, sequence)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path)
    }
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundCell,
    pub attention: Var,
    pub head: BoundHead,
}

impl BoundModel {
    pub fn group_vars(&self, group: ParamGroup) -> Vec<Var> {
        match group {
            ParamGroup::Encoder => self.encoder.vars(),
            ParamGroup::Attention => vec![self.attention],
            ParamGroup::Head => self.head.vars(),
        }
    }

    pub fn encode(&self, g: &mut Graph, steps: &[Var]) -> Result<Trajectory> {
        recurrent::encode(g, &self.encoder, steps, None)
    }

    pub fn forward(&self, g: &mut Graph, steps: &[Var]) -> Result<ForwardVars> {
        let trajectory = self.encode(g, steps)?;
        let attention = attention::attend(g, &trajectory.hidden, self.attention)?;
        let logits = self.head.forward(g, attention.context)?;
        Ok(ForwardVars {
            trajectory,
            attention,
            logits,
        })
    }
}

/// Recorded forward intermediates for a batch.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub trajectory: Trajectory,
    pub attention: AttentionVars,
    /// `[batch x 2]` raw logits.
    pub logits: Var,
}

/// Forward intermediates for a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub trajectory: HiddenTrajectory,
    pub attention: AttentionOutput,
    pub logits: Vec<f64>,
}

impl ForwardOutput {
    pub fn final_hidden(&self) -> &[f64] {
        self.trajectory.hidden.last().expect("nonempty trajectory")
    }

    pub fn context(&self) -> &[f64] {
        &self.attention.context
    }
}

/// Encoder, attention and head on one sequence of feature vectors.
pub fn forward(params: &ModelParams, sequence: &[impl AsRef<[f64]>]) -> Result<ForwardOutput> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, &[]);
    let steps = recurrent::sequence_to_steps(&mut g, sequence, params.config.feature_count)?;
    let out = bound.forward(&mut g, &steps)?;
    let hidden = out
        .trajectory
        .hidden
        .iter()
        .map(|&v| Ok(g.value(v)?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let cell = if out.trajectory.cell.is_empty() {
        None
    } else {
        Some(
            out.trajectory
                .cell
                .iter()
                .map(|&v| Ok(g.value(v)?.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok(ForwardOutput {
        trajectory: HiddenTrajectory { hidden, cell },
        attention: AttentionOutput {
            scores: g.value(out.attention.scores)?.to_vec(),
            weights: g.value(out.attention.weights)?.to_vec(),
            context: g.value(out.attention.context)?.to_vec(),
        },
        logits: g.value(out.logits)?.to_vec(),
    })
}

/// Argmax over the two logits; 1 means at-risk. Exact ties predict 0.
pub fn predict_label(logits: &[f64]) -> u8 {
    u8::from(logits[1] > logits[0])
}

const CHECKPOINT_FORMAT: &str = "earlykd-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn checkpoint_to_string(params: &ModelParams) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: params.config,
        params: params
            .named_tensors()
            .into_iter()
            .map(|(name, group, t)| NamedArray {
                name,
                group,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::invalid(e.to_string()))
}

pub fn checkpoint_from_str(text: &str, origin: &Path) -> Result<ModelParams> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            origin,
            format!("unsupported checkpoint {} v{}", file.format, file.version),
        ));
    }
    file.config.validate()?;
    let mut params = ModelParams::zeros(file.config);
    let names: Vec<String> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _, _)| n)
        .collect();
    if names.len() != file.params.len() {
        return Err(Error::parse(
            origin,
            format!(
                "expected {} arrays, found {}",
                names.len(),
                file.params.len()
            ),
        ));
    }
    let mut slots = params.tensors_mut();
    for ((slot, name), array) in slots.iter_mut().zip(&names).zip(file.params) {
        if &array.name != name {
            return Err(Error::parse(
                origin,
                format!("expected array `{name}`, found `{}`", array.name),
            ));
        }
        if array.shape != slot.shape() {
            return Err(Error::parse(
                origin,
                format!(
                    "array `{name}` has shape {:?}, expected {:?}",
                    array.shape,
                    slot.shape()
                ),
            ));
        }
        **slot = Tensor::new(array.shape, array.data)?;
    }
    params.validate()?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}
