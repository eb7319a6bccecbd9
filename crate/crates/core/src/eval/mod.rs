//! Metrics, repeated-run aggregation, cross-validated grid search and the
//! experiment harnesses.

mod baselines;
mod report;
mod suite;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StudentSequence;
use crate::model::{ModelConfig, ModelParams};
use crate::recurrent::CellKind;
use crate::train::{self, TrainConfig};

pub use baselines::{BaselineKind, BaselineParams};
pub use report::{Report, ReportRow};
pub use suite::{
    ablation_suite, baseline_suite, kd_run, run_baseline, teacher_report, week_range, Experiment,
    SplitData,
};

/// Binary contingency counts with at-risk (1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            op: "confusion",
            left: vec![preds.len()],
            right: vec![labels.len()],
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => {
                return Err(Error::invalid(format!(
                    "predictions and labels must be 0 or 1, got ({p}, {y})"
                )))
            }
        }
    }
    Ok(cm)
}

/// Metrics of one evaluation. Undefined ratios are reported as 0 and flagged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Support-weighted mean of the per-class F1 scores.
    pub weighted_f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = f1_score(precision, recall);
    let (neg_p, _) = ratio(cm.tn, cm.tn + cm.fn_);
    let (neg_r, _) = ratio(cm.tn, cm.tn + cm.fp);
    let total = cm.total();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        let pos = (cm.tp + cm.fn_) as f64;
        let neg = (cm.tn + cm.fp) as f64;
        (pos * f1 + neg * f1_score(neg_p, neg_r)) / total as f64
    };
    Metrics {
        precision,
        recall,
        f1,
        weighted_f1,
        precision_undefined,
        recall_undefined,
    }
}

/// Arithmetic means over runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub base_seed: u64,
    pub runs: Vec<Metrics>,
    pub mean: MeanMetrics,
}

impl MetricsReport {
    pub fn from_runs(base_seed: u64, runs: Vec<Metrics>) -> Self {
        let n = runs.len().max(1) as f64;
        let mut mean = MeanMetrics::default();
        for m in &runs {
            mean.precision += m.precision;
            mean.recall += m.recall;
            mean.f1 += m.f1;
            mean.weighted_f1 += m.weighted_f1;
        }
        mean.precision /= n;
        mean.recall /= n;
        mean.f1 /= n;
        mean.weighted_f1 /= n;
        MetricsReport {
            base_seed,
            runs,
            mean,
        }
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }
}

/// Runs `experiment` with seeds `base_seed..base_seed + runs`. Runs may
/// execute concurrently on the current rayon pool; results are reduced in
/// seed order.
pub fn repeated_runs<F>(runs: usize, base_seed: u64, experiment: F) -> Result<MetricsReport>
where
    F: Fn(u64) -> Result<Metrics> + Sync,
{
    if runs == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    let results: Vec<Metrics> = (0..runs as u64)
        .into_par_iter()
        .map(|i| experiment(base_seed + i))
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_runs(base_seed, results))
}

/// Evaluates a trained classifier on weeks `1..=n` of `data`.
pub fn evaluate<C: train::Classifier>(
    model: &C,
    data: &[StudentSequence],
    n: usize,
) -> Result<Metrics> {
    let preds = train::predict(model, data, n)?;
    let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
    Ok(metrics(&confusion(&preds, &labels)?))
}

/// Validation index sets of a stratified `k`-fold split. Each class is
/// shuffled and dealt round-robin, continuing the deal across classes so
/// fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!(
            "cannot split {} students into {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub cell: CellKind,
    pub hidden_size: usize,
    pub lr: f64,
}

/// GRU and LSTM × hidden sizes {4, 6, 8, 10} × learning rates {0.01, 0.001}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for cell in [CellKind::Gru, CellKind::Lstm] {
        for hidden_size in [4, 6, 8, 10] {
            for lr in [0.01, 0.001] {
                grid.push(GridPoint {
                    cell,
                    hidden_size,
                    lr,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    /// Mean validation F1 of every grid point, in grid order.
    pub scores: Vec<(GridPoint, f64)>,
}

fn preferred(a: &(GridPoint, f64), b: &(GridPoint, f64)) -> bool {
    // true when `a` should replace `b` as the best point
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    let key = |p: &GridPoint| (p.hidden_size, p.lr, p.cell == CellKind::Lstm);
    key(&a.0).partial_cmp(&key(&b.0)) == Some(std::cmp::Ordering::Less)
}

/// Stratified `folds`-fold search for the attention model on weeks
/// `1..=weeks`, maximising mean validation F1. Ties go to the smaller hidden
/// size, then the lower learning rate, then GRU.
pub fn grid_search(
    data: &[StudentSequence],
    grid: &[GridPoint],
    folds: usize,
    weeks: usize,
    train: &TrainConfig,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::invalid("grid search needs at least one grid point"));
    }
    let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
    let fold_sets = stratified_folds(&labels, folds, train.seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|p| (0..folds).map(move |f| (p, f)))
        .collect();
    let f1s: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let point = grid[p];
            let held = &fold_sets[f];
            let (mut fit_set, mut val_set) = (Vec::new(), Vec::new());
            for (i, s) in data.iter().enumerate() {
                if held.binary_search(&i).is_ok() {
                    val_set.push(s.clone());
                } else {
                    fit_set.push(s.clone());
                }
            }
            let config = ModelConfig::new(
                point.cell,
                point.hidden_size,
                crate::features::NUM_FEATURES,
                weeks,
            );
            let tc = TrainConfig {
                lr: point.lr,
                ..*train
            };
            let mut model = ModelParams::init(config, tc.seed)?;
            train::fit(&mut model, &fit_set, weeks, &tc)?;
            Ok(evaluate(&model, &val_set, weeks)?.f1)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<(GridPoint, f64)> = grid
        .iter()
        .enumerate()
        .map(|(p, &point)| {
            let mean = f1s[p * folds..(p + 1) * folds].iter().sum::<f64>() / folds as f64;
            (point, mean)
        })
        .collect();
    let mut best = scores[0];
    for s in &scores[1..] {
        if preferred(s, &best) {
            best = *s;
        }
    }
    Ok(GridResult {
        best: best.0,
        scores,
    })
}

#[cfg(test)]
mod tests;
