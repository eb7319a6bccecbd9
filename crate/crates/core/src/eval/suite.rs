//! Baseline comparison, ablation and teacher experiments over one split.

use serde::{Deserialize, Serialize};

use super::{evaluate, repeated_runs, BaselineKind, BaselineParams, Metrics, Report, ReportRow};
use crate::distill::{
    ablation_variants, distill_student, train_teacher, DistillConfig, TrainedModel,
};
use crate::error::{Error, Result};
use crate::features::{make_split, Course, SplitSpec, StudentSequence, NUM_FEATURES};
use crate::model::{ModelConfig, ModelParams};
use crate::recurrent::CellKind;
use crate::train::{self, TrainConfig};

pub const KD_MODEL: &str = "RNN-Attention-KD";
pub const TEACHER_MODEL: &str = "RNN-Attention";

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub name: String,
    pub train: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
    /// Full course length `m`.
    pub weeks: usize,
}

impl SplitData {
    pub fn new(spec: &SplitSpec, courses: &[Course]) -> Result<Self> {
        let (train, test) = make_split(spec, courses)?;
        let weeks = train
            .first()
            .or(test.first())
            .map(|s| s.weeks.len())
            .ok_or_else(|| Error::invalid(format!("split {} has no students", spec.name)))?;
        if let Some(s) = train.iter().chain(&test).find(|s| s.weeks.len() != weeks) {
            return Err(Error::invalid(format!(
                "split {}: student `{}` has {} weeks, expected {weeks}",
                spec.name,
                s.student_id,
                s.weeks.len()
            )));
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::invalid(format!(
                "split {} has an empty side",
                spec.name
            )));
        }
        Ok(SplitData {
            name: spec.name.clone(),
            train,
            test,
            weeks,
        })
    }
}

/// Shared settings of a repeated-run experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub cell: CellKind,
    pub hidden_size: usize,
    /// `train.seed` is the base seed: the teacher uses it, run `i` uses
    /// `base + i`.
    pub train: TrainConfig,
    pub lambda: f64,
    pub runs: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            cell: CellKind::Gru,
            hidden_size: 4,
            train: TrainConfig::default(),
            lambda: 0.1,
            runs: 30,
        }
    }
}

impl Experiment {
    pub fn model_config(&self, weeks: usize) -> ModelConfig {
        ModelConfig::new(self.cell, self.hidden_size, NUM_FEATURES, weeks)
    }

    pub fn train_teacher(&self, split: &SplitData) -> Result<TrainedModel> {
        train_teacher(&split.train, self.model_config(split.weeks), &self.train)
    }

    /// Full-loss distillation settings for run `seed`.
    pub fn distill_config(&self, weeks: usize, seed: u64) -> DistillConfig {
        DistillConfig {
            lambda: self.lambda,
            use_hint: true,
            use_context: true,
            use_soft: true,
            weeks,
            lr: self.train.lr,
            l2: self.train.l2,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed,
        }
    }

    fn annotate(&self, report: &mut Report, split: &SplitData) {
        report
            .meta("split", &split.name)
            .meta("train_students", split.train.len())
            .meta("test_students", split.test.len())
            .meta("cell", self.cell)
            .meta("hidden_size", self.hidden_size)
            .meta("lr", self.train.lr)
            .meta("l2", self.train.l2)
            .meta("batch_size", self.train.batch_size)
            .meta("epochs", self.train.epochs)
            .meta("lambda", self.lambda)
            .meta("runs", self.runs)
            .meta("base_seed", self.train.seed);
    }
}

pub fn week_range(n: usize) -> String {
    format!("1-{n}")
}

/// Distils one student and scores it on the split's test course.
pub fn kd_run(teacher: &ModelParams, split: &SplitData, config: &DistillConfig) -> Result<Metrics> {
    let pair = distill_student(teacher, &split.train, config)?;
    evaluate(&pair.student, &split.test, config.weeks)
}

/// Trains one baseline on weeks `1..=weeks` and scores it.
pub fn run_baseline(
    kind: BaselineKind,
    split: &SplitData,
    experiment: &Experiment,
    weeks: usize,
    seed: u64,
) -> Result<Metrics> {
    let mut model = BaselineParams::init(kind, experiment.hidden_size, weeks, seed)?;
    let tc = TrainConfig {
        seed,
        ..experiment.train
    };
    train::fit(&mut model, &split.train, weeks, &tc)?;
    evaluate(&model, &split.test, weeks)
}

fn check_weeks(split: &SplitData, weeks: &[usize]) -> Result<()> {
    if let Some(&n) = weeks.iter().find(|&&n| n == 0 || n > split.weeks) {
        return Err(Error::invalid(format!(
            "week range 1-{n} is outside the {}-week course",
            split.weeks
        )));
    }
    Ok(())
}

/// Six baselines and the distilled student at every week range.
pub fn baseline_suite(
    split: &SplitData,
    teacher: &ModelParams,
    experiment: &Experiment,
    weeks: &[usize],
) -> Result<Report> {
    check_weeks(split, weeks)?;
    let base = experiment.train.seed;
    let mut report = Report::new("Baseline comparison");
    experiment.annotate(&mut report, split);
    for &n in weeks {
        let range = week_range(n);
        for kind in BaselineKind::ALL {
            let r = repeated_runs(experiment.runs, base, |seed| {
                run_baseline(kind, split, experiment, n, seed)
            })?;
            report
                .rows
                .push(ReportRow::new(&split.name, kind.name(), &range, &r));
        }
        let r = repeated_runs(experiment.runs, base, |seed| {
            kd_run(teacher, split, &experiment.distill_config(n, seed))
        })?;
        report
            .rows
            .push(ReportRow::new(&split.name, KD_MODEL, &range, &r));
    }
    Ok(report)
}

/// The seven loss subsets at every week range.
pub fn ablation_suite(
    split: &SplitData,
    teacher: &ModelParams,
    experiment: &Experiment,
    weeks: &[usize],
) -> Result<Report> {
    check_weeks(split, weeks)?;
    let base = experiment.train.seed;
    let mut report = Report::new("Loss ablation");
    experiment.annotate(&mut report, split);
    for &n in weeks {
        let range = week_range(n);
        for variant in ablation_variants(&experiment.distill_config(n, base)) {
            let r = repeated_runs(experiment.runs, base, |seed| {
                kd_run(
                    teacher,
                    split,
                    &DistillConfig {
                        seed,
                        ..variant.config
                    },
                )
            })?;
            report
                .rows
                .push(ReportRow::new(&split.name, variant.name, &range, &r));
        }
    }
    Ok(report)
}

/// Each split's teacher scored on its test course at full length.
pub fn teacher_report(splits: &[(SplitData, ModelParams)]) -> Result<Report> {
    let mut report = Report::new("Teacher performance");
    for (split, teacher) in splits {
        let m = evaluate(teacher, &split.test, split.weeks)?;
        let r = super::MetricsReport::from_runs(0, vec![m]);
        report.rows.push(ReportRow::new(
            &split.name,
            TEACHER_MODEL,
            &week_range(split.weeks),
            &r,
        ));
    }
    Ok(report)
}
