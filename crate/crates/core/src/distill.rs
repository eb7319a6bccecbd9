//! Teacher pretraining and three-phase distillation into a truncated student.
//!
//! Every student epoch runs up to three passes over the same shuffled
//! mini-batches:
//!
//! 1. hint: `MSE(h_m^teacher, h_n^student)`, updating only the encoder;
//! 2. context: `MSE(C_m^teacher, C_n^student)`, updating only attention;
//! 3. distillation: `CE(y, ŷ_n) + λ CE(softmax(ŷ_m), ŷ_n)`, updating every
//!    student parameter. The hard term is always present; the soft term only
//!    when enabled.
//!
//! The teacher is borrowed immutably throughout and its outputs on the full
//! sequences are computed once up front. Each phase owns its Adam state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StudentSequence;
use crate::model::{ForwardOutput, ModelConfig, ModelParams, ParamGroup};
use crate::numerics::{cross_entropy, mse, stable_softmax, Adam, Graph, Var};
use crate::train::{self, batch_labels, batch_steps, install_grads, Batcher, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the soft cross-entropy term.
    pub lambda: f64,
    pub use_hint: bool,
    pub use_context: bool,
    pub use_soft: bool,
    /// Student truncation length `n`.
    pub weeks: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        DistillConfig {
            lambda: 0.1,
            use_hint: true,
            use_context: true,
            use_soft: true,
            weeks: 3,
            lr: t.lr,
            l2: t.l2,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
        }
    }
}

impl DistillConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            l2: self.l2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    /// The same settings with different loss flags.
    pub fn with_losses(mut self, hint: bool, context: bool, soft: bool) -> Self {
        self.use_hint = hint;
        self.use_context = context;
        self.use_soft = soft;
        self
    }

    pub fn validate(&self, full_weeks: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.weeks == 0 || self.weeks > full_weeks {
            return Err(Error::invalid(format!(
                "student weeks must be within 1..={full_weeks}, got {}",
                self.weeks
            )));
        }
        self.train_config().validate()
    }

    /// Short name of the loss combination, e.g. `CV+HD+Soft`.
    pub fn loss_label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_context {
            parts.push("CV");
        }
        if self.use_hint {
            parts.push("HD");
        }
        if self.use_soft {
            parts.push("Soft");
        }
        if parts.is_empty() {
            "Hard".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Teacher,
    Hint,
    Context,
    Distill,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Teacher => "teacher",
            Phase::Hint => "hint",
            Phase::Context => "context",
            Phase::Distill => "distill",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
}

/// How many times each loss term was evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossCalls {
    pub hint: usize,
    pub context: usize,
    pub hard: usize,
    pub soft: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub teacher: ModelParams,
    pub student: ModelParams,
    pub trace: Vec<TraceEntry>,
    pub calls: LossCalls,
}

/// Writes `epoch,phase,loss` rows.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &[TraceEntry]) -> std::io::Result<()> {
    writeln!(w, "epoch,phase,loss")?;
    for e in trace {
        writeln!(w, "{},{},{}", e.epoch, e.phase, e.loss)?;
    }
    Ok(())
}

fn check_same_size(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (sa, sb) = (g.shape(a)?, g.shape(b)?);
    if sa != sb {
        return Err(Error::Shape {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        });
    }
    Ok(())
}

/// `MSE(h_m^teacher, h_n^student)` on recorded final hidden states.
pub fn hint_loss(g: &mut Graph, teacher_hidden: Var, student_hidden: Var) -> Result<Var> {
    check_same_size(g, teacher_hidden, student_hidden, "hint_loss")?;
    g.mse(teacher_hidden, student_hidden)
}

/// `MSE(C_m^teacher, C_n^student)` on recorded context vectors.
pub fn context_loss(g: &mut Graph, teacher_context: Var, student_context: Var) -> Result<Var> {
    check_same_size(g, teacher_context, student_context, "context_loss")?;
    g.mse(teacher_context, student_context)
}

/// `CE(y, ŷ_n) + λ CE(p_teacher, ŷ_n)`; `teacher_probs` is a constant and
/// the soft term is skipped entirely when it is `None`.
pub fn distillation_loss(
    g: &mut Graph,
    y_true: Var,
    student_logits: Var,
    teacher_probs: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let hard = g.cross_entropy(student_logits, y_true)?;
    match teacher_probs {
        None => Ok(hard),
        Some(p) => {
            let soft = g.cross_entropy(student_logits, p)?;
            let weighted = g.affine(soft, lambda, 0.0)?;
            g.add(hard, weighted)
        }
    }
}

/// Hint loss between two single-sequence forward outputs.
pub fn hint_loss_values(teacher: &ForwardOutput, student: &ForwardOutput) -> Result<f64> {
    let (t, s) = (teacher.final_hidden(), student.final_hidden());
    if t.len() != s.len() {
        return Err(Error::Shape {
            op: "hint_loss",
            left: vec![t.len()],
            right: vec![s.len()],
        });
    }
    Ok(mse(t, s))
}

pub fn context_loss_values(teacher: &ForwardOutput, student: &ForwardOutput) -> Result<f64> {
    let (t, s) = (teacher.context(), student.context());
    if t.len() != s.len() {
        return Err(Error::Shape {
            op: "context_loss",
            left: vec![t.len()],
            right: vec![s.len()],
        });
    }
    Ok(mse(t, s))
}

pub fn distillation_loss_values(
    y_true: &[f64],
    student_logits: &[f64],
    teacher_logits: &[f64],
    lambda: f64,
) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let soft_target = stable_softmax(teacher_logits)?;
    Ok(cross_entropy(student_logits, y_true)?
        + lambda * cross_entropy(student_logits, &soft_target)?)
}

/// A trained full-length model and its per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub trace: Vec<TraceEntry>,
}

/// Pretrains an RNN-Attention model on full-length sequences with hard
/// cross-entropy. Parameters are initialised from `train.seed`.
pub fn train_teacher(
    data: &[StudentSequence],
    config: ModelConfig,
    train: &TrainConfig,
) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train a teacher on an empty dataset"));
    }
    if let Some(s) = data.iter().find(|s| s.weeks.len() != config.seq_len) {
        return Err(Error::invalid(format!(
            "teacher expects {} weeks, student `{}` has {}",
            config.seq_len,
            s.student_id,
            s.weeks.len()
        )));
    }
    let mut params = ModelParams::init(config, train.seed)?;
    let losses = train::fit(&mut params, data, config.seq_len, train)?;
    Ok(TrainedModel {
        params,
        trace: losses
            .into_iter()
            .enumerate()
            .map(|(epoch, loss)| TraceEntry {
                epoch: epoch + 1,
                phase: Phase::Teacher,
                loss,
            })
            .collect(),
    })
}

/// Teacher outputs on the full sequences, one row per student.
#[derive(Debug, Clone)]
struct TeacherTargets {
    hidden: Vec<f64>,
    context: Vec<f64>,
    probs: Vec<f64>,
    width: usize,
}

impl TeacherTargets {
    fn compute(teacher: &ModelParams, data: &[StudentSequence]) -> Result<Self> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut g = Graph::new();
        let bound = teacher.bind(&mut g, &[]);
        let steps = batch_steps(&mut g, data, &idx, teacher.config.seq_len)?;
        let out = bound.forward(&mut g, &steps)?;
        let logits = g.value(out.logits)?;
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(2) {
            probs.extend(stable_softmax(row)?);
        }
        Ok(TeacherTargets {
            hidden: g.value(out.trajectory.last())?.to_vec(),
            context: g.value(out.attention.context)?.to_vec(),
            probs,
            width: teacher.config.hidden_size,
        })
    }

    fn gather(&self, g: &mut Graph, which: &[f64], width: usize, idx: &[usize]) -> Result<Var> {
        let mut values = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            values.extend_from_slice(&which[i * width..(i + 1) * width]);
        }
        g.constant_from(vec![idx.len(), width], values)
    }
}

/// Stateful student trainer; [`distill_student`] drives it for a full run.
/// Individual phases can be stepped directly.
#[derive(Debug)]
pub struct Distiller<'a> {
    teacher: &'a ModelParams,
    student: ModelParams,
    data: &'a [StudentSequence],
    config: DistillConfig,
    targets: TeacherTargets,
    hint_opt: Adam,
    context_opt: Adam,
    full_opt: Adam,
    batcher: Batcher,
    epoch: usize,
    trace: Vec<TraceEntry>,
    calls: LossCalls,
}

impl<'a> Distiller<'a> {
    /// Fresh Xavier student seeded from `config.seed`.
    pub fn new(
        teacher: &'a ModelParams,
        data: &'a [StudentSequence],
        config: DistillConfig,
    ) -> Result<Self> {
        let student_config = ModelConfig {
            seq_len: config.weeks,
            ..teacher.config
        };
        config.validate(teacher.config.seq_len)?;
        let student = ModelParams::init(student_config, config.seed)?;
        Self::with_student(teacher, student, data, config)
    }

    pub fn with_student(
        teacher: &'a ModelParams,
        student: ModelParams,
        data: &'a [StudentSequence],
        config: DistillConfig,
    ) -> Result<Self> {
        config.validate(teacher.config.seq_len)?;
        teacher.validate()?;
        student.validate()?;
        if !teacher.config.same_architecture(&student.config) {
            return Err(Error::invalid(format!(
                "teacher ({} r={}) and student ({} r={}) architectures differ",
                teacher.config.cell,
                teacher.config.hidden_size,
                student.config.cell,
                student.config.hidden_size
            )));
        }
        if data.is_empty() {
            return Err(Error::invalid("cannot distill on an empty dataset"));
        }
        if let Some(s) = data
            .iter()
            .find(|s| s.weeks.len() != teacher.config.seq_len)
        {
            return Err(Error::invalid(format!(
                "distillation needs full {}-week sequences, student `{}` has {}",
                teacher.config.seq_len,
                s.student_id,
                s.weeks.len()
            )));
        }
        train::warn_if_single_class(data);
        let adam = config.train_config().adam();
        Ok(Distiller {
            teacher,
            targets: TeacherTargets::compute(teacher, data)?,
            student,
            data,
            hint_opt: Adam::new(adam)?,
            context_opt: Adam::new(adam)?,
            full_opt: Adam::new(adam)?,
            batcher: Batcher::new(data.len(), config.batch_size, config.seed),
            config,
            epoch: 0,
            trace: Vec::new(),
            calls: LossCalls::default(),
        })
    }

    pub fn student(&self) -> &ModelParams {
        &self.student
    }

    pub fn calls(&self) -> LossCalls {
        self.calls
    }

    pub fn next_batches(&mut self) -> Vec<Vec<usize>> {
        self.batcher.epoch()
    }

    /// One optimisation step of `phase` on a mini-batch; returns the loss
    /// before the update.
    pub fn step(&mut self, phase: Phase, idx: &[usize]) -> Result<f64> {
        let n = self.config.weeks;
        let r = self.targets.width;
        let mut g = Graph::new();
        let steps = batch_steps(&mut g, self.data, idx, n)?;
        match phase {
            Phase::Hint => {
                let bound = self.student.bind(&mut g, &[ParamGroup::Encoder]);
                let traj = bound.encode(&mut g, &steps)?;
                let target = self.targets.gather(&mut g, &self.targets.hidden, r, idx)?;
                let loss = hint_loss(&mut g, target, traj.last())?;
                self.calls.hint += 1;
                self.update(
                    g,
                    loss,
                    &bound.group_vars(ParamGroup::Encoder),
                    ParamGroup::Encoder,
                )
            }
            Phase::Context => {
                let bound = self.student.bind(&mut g, &[ParamGroup::Attention]);
                let traj = bound.encode(&mut g, &steps)?;
                let att = crate::attention::attend(&mut g, &traj.hidden, bound.attention)?;
                let target = self.targets.gather(&mut g, &self.targets.context, r, idx)?;
                let loss = context_loss(&mut g, target, att.context)?;
                self.calls.context += 1;
                self.update(g, loss, &[bound.attention], ParamGroup::Attention)
            }
            Phase::Distill => {
                let bound = self.student.bind(&mut g, &ParamGroup::ALL);
                let out = bound.forward(&mut g, &steps)?;
                let labels = batch_labels(&mut g, self.data, idx)?;
                let soft = if self.config.use_soft {
                    self.calls.soft += 1;
                    Some(self.targets.gather(&mut g, &self.targets.probs, 2, idx)?)
                } else {
                    None
                };
                self.calls.hard += 1;
                let loss = distillation_loss(&mut g, labels, out.logits, soft, self.config.lambda)?;
                let value = g.scalar(loss)?;
                let vars: Vec<Var> = ParamGroup::ALL
                    .iter()
                    .flat_map(|&gr| bound.group_vars(gr))
                    .collect();
                let grads = g.backward(loss)?;
                let mut tensors = self.student.tensors_mut();
                install_grads(&grads, &vars, &mut tensors)?;
                self.full_opt.step(&mut tensors)?;
                Ok(value)
            }
            Phase::Teacher => Err(Error::invalid("the teacher is frozen during distillation")),
        }
    }

    fn update(&mut self, mut g: Graph, loss: Var, vars: &[Var], group: ParamGroup) -> Result<f64> {
        let value = g.scalar(loss)?;
        let grads = g.backward(loss)?;
        let mut tensors = self.student.group_mut(group);
        install_grads(&grads, vars, &mut tensors)?;
        let opt = match group {
            ParamGroup::Encoder => &mut self.hint_opt,
            ParamGroup::Attention => &mut self.context_opt,
            ParamGroup::Head => unreachable!("the head is only updated in the distill phase"),
        };
        opt.step(&mut tensors)?;
        Ok(value)
    }

    /// Runs one pass of `phase` over `batches` and records its mean loss.
    pub fn run_phase(&mut self, phase: Phase, batches: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        for idx in batches {
            total += self.step(phase, idx)?;
        }
        let mean = total / batches.len().max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::invalid(format!(
                "{phase} loss diverged at epoch {}",
                self.epoch
            )));
        }
        self.trace.push(TraceEntry {
            epoch: self.epoch,
            phase,
            loss: mean,
        });
        Ok(mean)
    }

    /// One full epoch: enabled phases in order over one shuffle.
    pub fn run_epoch(&mut self) -> Result<()> {
        self.epoch += 1;
        let batches = self.next_batches();
        if self.config.use_hint {
            self.run_phase(Phase::Hint, &batches)?;
        }
        if self.config.use_context {
            self.run_phase(Phase::Context, &batches)?;
        }
        self.run_phase(Phase::Distill, &batches)?;
        Ok(())
    }

    pub fn finish(self) -> TrainedPair {
        TrainedPair {
            teacher: self.teacher.clone(),
            student: self.student,
            trace: self.trace,
            calls: self.calls,
        }
    }
}

/// Trains a student on weeks `1..=config.weeks` under the frozen teacher.
pub fn distill_student(
    teacher: &ModelParams,
    data: &[StudentSequence],
    config: &DistillConfig,
) -> Result<TrainedPair> {
    let mut d = Distiller::new(teacher, data, *config)?;
    for _ in 0..config.epochs {
        d.run_epoch()?;
    }
    Ok(d.finish())
}

/// A named loss-subset configuration of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub config: DistillConfig,
}

/// The seven loss subsets: CV+HD+Soft, CV+Soft, HD+Soft, CV+HD, CV, HD, Soft.
pub fn ablation_variants(base: &DistillConfig) -> Vec<AblationVariant> {
    [
        ("CV+HD+Soft", true, true, true),
        ("CV+Soft", false, true, true),
        ("HD+Soft", true, false, true),
        ("CV+HD", true, true, false),
        ("CV", false, true, false),
        ("HD", true, false, false),
        ("Soft", false, false, true),
    ]
    .into_iter()
    .map(|(name, hint, context, soft)| AblationVariant {
        name,
        config: base.with_losses(hint, context, soft),
    })
    .collect()
}
