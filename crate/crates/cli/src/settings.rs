//! Training settings merged from flags, an optional TOML file and defaults.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use earlykd::distill::DistillConfig;
use earlykd::eval::Experiment;
use earlykd::recurrent::CellKind;
use earlykd::train::TrainConfig;

/// Overrides shared by the training subcommands. The same keys may appear
/// in a `--config` TOML file; flags win over the file, the file over the
/// built-in defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Recurrent cell: gru, lstm or vanilla.
    #[arg(long)]
    pub cell: Option<CellKind>,
    /// Hidden units r.
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight decay.
    #[arg(long)]
    pub l2: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training epochs; a distillation epoch runs all three phases.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base seed: model init and shuffling; repeated runs use seed..seed+runs-1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the soft-target term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Independent runs to average.
    #[arg(long)]
    pub runs: Option<usize>,
}

/// Fully resolved settings; written into every run's config snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub cell: CellKind,
    pub hidden_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub runs: usize,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            earlykd::Error::Invalid(format!("{}: {}", path.display(), e.message())).into()
        })
    }

    pub fn resolve(&self, file: Option<&Path>) -> Result<Resolved> {
        let file = match file {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let t = TrainConfig::default();
        let e = Experiment::default();
        let r = Resolved {
            cell: self.cell.or(file.cell).unwrap_or(e.cell),
            hidden_size: self
                .hidden_size
                .or(file.hidden_size)
                .unwrap_or(e.hidden_size),
            lr: self.lr.or(file.lr).unwrap_or(t.lr),
            l2: self.l2.or(file.l2).unwrap_or(t.l2),
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(t.batch_size),
            epochs: self.epochs.or(file.epochs).unwrap_or(t.epochs),
            seed: self.seed.or(file.seed).unwrap_or(t.seed),
            lambda: self.lambda.or(file.lambda).unwrap_or(e.lambda),
            runs: self.runs.or(file.runs).unwrap_or(e.runs),
        };
        r.train().validate()?;
        if r.hidden_size == 0 {
            return Err(earlykd::Error::Invalid("hidden size must be positive".into()).into());
        }
        if r.runs == 0 {
            return Err(earlykd::Error::Invalid("runs must be at least 1".into()).into());
        }
        if r.lambda.is_nan() || r.lambda < 0.0 {
            return Err(
                earlykd::Error::Invalid(format!("lambda must be >= 0, got {}", r.lambda)).into(),
            );
        }
        Ok(r)
    }
}

impl Resolved {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            l2: self.l2,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            cell: self.cell,
            hidden_size: self.hidden_size,
            train: self.train(),
            lambda: self.lambda,
            runs: self.runs,
        }
    }

    pub fn distill(&self, weeks: usize, losses: Losses) -> DistillConfig {
        self.experiment()
            .distill_config(weeks, self.seed)
            .with_losses(losses.hint, losses.context, losses.soft)
    }
}

/// Parsed `--losses` list such as `hint,context,soft` or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Losses {
    pub hint: bool,
    pub context: bool,
    pub soft: bool,
}

impl std::str::FromStr for Losses {
    type Err = earlykd::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Losses {
            hint: false,
            context: false,
            soft: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "hint" => out.hint = true,
                "context" => out.context = true,
                "soft" => out.soft = true,
                "none" => {}
                other => {
                    return Err(earlykd::Error::Invalid(format!(
                        "unknown loss `{other}` (expected hint, context, soft or none)"
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "lr = 0.001\nepochs = 20\ncell = \"lstm\"\n").unwrap();
        let flags = Settings {
            epochs: Some(5),
            ..Settings::default()
        };
        let r = flags.resolve(Some(&path)).unwrap();
        assert_eq!(r.epochs, 5);
        assert_eq!(r.lr, 0.001);
        assert_eq!(r.cell, CellKind::Lstm);
        assert_eq!(r.hidden_size, 4);
        assert_eq!(r.batch_size, 8);
        assert_eq!(r.l2, 1e-5);
        assert_eq!(r.lambda, 0.1);
    }

    #[test]
    fn bad_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "learning_rate = 0.1\n").unwrap();
        assert!(Settings::default().resolve(Some(&path)).is_err());
        let flags = Settings {
            lr: Some(-1.0),
            ..Settings::default()
        };
        assert!(flags.resolve(None).is_err());
    }

    #[test]
    fn loss_lists() {
        let l: Losses = "hint,context,soft".parse().unwrap();
        assert!(l.hint && l.context && l.soft);
        let l: Losses = "soft".parse().unwrap();
        assert!(!l.hint && !l.context && l.soft);
        let l: Losses = "none".parse().unwrap();
        assert!(!l.hint && !l.context && !l.soft);
        assert!("hint,logits".parse::<Losses>().is_err());
    }
}
