use super::*;
use crate::features::NUM_FEATURES;
use crate::train::Classifier;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<u8>, Vec<u8>) {
    let p = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let l = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    (p, l)
}

/// Per-element tally plus textbook formulas, written independently of
/// `confusion`/`metrics`.
fn brute_force(preds: &[u8], labels: &[u8]) -> (usize, usize, usize, usize, f64, f64, f64, f64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for i in 0..preds.len() {
        if preds[i] == 1 && labels[i] == 1 {
            tp += 1;
        }
        if preds[i] == 1 && labels[i] == 0 {
            fp += 1;
        }
        if preds[i] == 0 && labels[i] == 1 {
            fn_ += 1;
        }
        if preds[i] == 0 && labels[i] == 0 {
            tn += 1;
        }
    }
    let class_f1 = |c: u8| {
        let hit = (0..preds.len())
            .filter(|&i| preds[i] == c && labels[i] == c)
            .count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        let actual = labels.iter().filter(|&&l| l == c).count() as f64;
        let p = if predicted > 0.0 {
            hit / predicted
        } else {
            0.0
        };
        let r = if actual > 0.0 { hit / actual } else { 0.0 };
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    };
    let p = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let r = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let n = preds.len() as f64;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let weighted = (pos * class_f1(1) + (n - pos) * class_f1(0)) / n;
    (tp, fp, fn_, tn, p, r, class_f1(1), weighted)
}

#[test]
fn confusion_examples() {
    let cm = confusion(&[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap();
    assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (2, 2, 0, 0));
    let cm = confusion(&[0, 0], &[1, 0]).unwrap();
    assert_eq!((cm.fn_, cm.tn, cm.tp, cm.fp), (1, 1, 0, 0));
    assert!(matches!(confusion(&[1], &[1, 0]), Err(Error::Shape { .. })));
    assert!(confusion(&[2], &[1]).is_err());
}

#[test]
fn metrics_examples() {
    let m = metrics(&ConfusionMatrix {
        tp: 1,
        fp: 1,
        fn_: 1,
        tn: 0,
    });
    assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));

    let m = metrics(&ConfusionMatrix {
        tp: 0,
        fp: 0,
        fn_: 2,
        tn: 3,
    });
    assert_eq!(m.precision, 0.0);
    assert!(m.precision_undefined);
    assert!(!m.recall_undefined);

    let m = metrics(&ConfusionMatrix {
        tp: 4,
        fp: 0,
        fn_: 0,
        tn: 6,
    });
    assert_eq!(
        (m.precision, m.recall, m.f1, m.weighted_f1),
        (1.0, 1.0, 1.0, 1.0)
    );
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n = rng.random_range(1..=100);
        let (p, l) = random_pairs(&mut rng, n);
        let cm = confusion(&p, &l).unwrap();
        let (tp, fp, fn_, tn, pr, re, f1, wf1) = brute_force(&p, &l);
        assert_eq!((cm.tp, cm.fp, cm.fn_, cm.tn), (tp, fp, fn_, tn));
        assert_eq!(cm.total(), n);
        let m = metrics(&cm);
        assert_eq!(m.precision, pr);
        assert_eq!(m.recall, re);
        assert!((m.f1 - f1).abs() < 1e-12);
        assert!((m.weighted_f1 - wf1).abs() < 1e-12);
        if m.precision + m.recall > 0.0 {
            let harmonic = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            assert!((m.f1 - harmonic).abs() < 1e-12);
        }
        for v in [m.precision, m.recall, m.f1, m.weighted_f1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_joint_permutation(
        pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = |v: &[(u8, u8)]| -> (Vec<u8>, Vec<u8>) { v.iter().copied().unzip() };
        let (p, l) = split(&pairs);
        let (q, k) = split(&shuffled);
        prop_assert_eq!(
            metrics(&confusion(&p, &l).unwrap()),
            metrics(&confusion(&q, &k).unwrap())
        );
    }
}

#[test]
fn repeated_runs_average_in_seed_order() {
    let f1s = [0.5, 0.75, 1.0, 0.25];
    let report = repeated_runs(4, 10, |seed| {
        Ok(Metrics {
            f1: f1s[(seed - 10) as usize],
            ..Metrics::default()
        })
    })
    .unwrap();
    assert_eq!(report.run_count(), 4);
    assert_eq!(report.mean.f1, (0.5 + 0.75 + 1.0 + 0.25) / 4.0);
    assert_eq!(report.runs.iter().map(|m| m.f1).collect::<Vec<_>>(), f1s);

    let single = repeated_runs(1, 3, |seed| {
        Ok(Metrics {
            recall: seed as f64 / 10.0,
            ..Metrics::default()
        })
    })
    .unwrap();
    assert_eq!(single.mean.recall, single.runs[0].recall);
    assert!(repeated_runs(0, 0, |_| Ok(Metrics::default())).is_err());
}

#[test]
fn stratified_folds_partition_and_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(10..80);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        let folds = stratified_folds(&labels, 5, rng.random()).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        for class in [0u8, 1] {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {class}: {counts:?}");
        }
    }
    assert!(stratified_folds(&[0, 1, 0], 5, 0).is_err());
    assert!(stratified_folds(&[0, 1, 0], 1, 0).is_err());
}

#[test]
fn default_grid_has_sixteen_points() {
    let grid = default_grid();
    assert_eq!(grid.len(), 16);
    let distinct: std::collections::HashSet<String> = grid
        .iter()
        .map(|p| format!("{} {} {}", p.cell, p.hidden_size, p.lr))
        .collect();
    assert_eq!(distinct.len(), 16);
}

#[test]
fn grid_tie_breaks() {
    let gru4 = GridPoint {
        cell: CellKind::Gru,
        hidden_size: 4,
        lr: 0.01,
    };
    let gru6 = GridPoint {
        hidden_size: 6,
        ..gru4
    };
    let gru4_slow = GridPoint { lr: 0.001, ..gru4 };
    let lstm4 = GridPoint {
        cell: CellKind::Lstm,
        ..gru4
    };
    assert!(preferred(&(gru4, 0.5), &(gru6, 0.5)));
    assert!(preferred(&(gru4_slow, 0.5), &(gru4, 0.5)));
    assert!(preferred(&(gru4, 0.5), &(lstm4, 0.5)));
    assert!(preferred(&(gru6, 0.6), &(gru4, 0.5)));
}

fn toy(count: usize, weeks: usize, seed: u64) -> Vec<StudentSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = (i % 3 == 0) as u8;
            StudentSequence {
                student_id: format!("s{i}"),
                weeks: (0..weeks)
                    .map(|w| {
                        let mut v = [0.0; NUM_FEATURES];
                        for x in &mut v {
                            let drift = if label == 1 { 0.1 * w as f64 } else { 0.0 };
                            *x = (rng.random_range(0.3..0.8) - drift).max(0.0);
                        }
                        v
                    })
                    .collect(),
                label,
                grade: None,
            }
        })
        .collect()
}

#[test]
fn grid_search_single_point_and_determinism() {
    let data = toy(30, 4, 1);
    let point = GridPoint {
        cell: CellKind::Gru,
        hidden_size: 4,
        lr: 0.01,
    };
    let tc = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let r = grid_search(&data, &[point], 5, 4, &tc).unwrap();
    assert_eq!(r.best, point);
    assert_eq!(r.scores.len(), 1);
    let grid = [
        point,
        GridPoint {
            hidden_size: 6,
            ..point
        },
    ];
    let a = grid_search(&data, &grid, 3, 2, &tc).unwrap();
    let b = grid_search(&data, &grid, 3, 2, &tc).unwrap();
    assert_eq!(a, b);
    assert!(grid_search(&data, &[], 5, 4, &tc).is_err());
}

#[test]
fn baselines_only_see_their_weeks() {
    for kind in BaselineKind::ALL {
        let model = BaselineParams::init(kind, 4, 3, 7).unwrap();
        let data = toy(5, 7, 2);
        let mut altered = data.clone();
        for s in &mut altered {
            for w in &mut s.weeks[3..] {
                *w = [1.0; NUM_FEATURES];
            }
        }
        assert_eq!(
            crate::train::logits(&model, &data, 3).unwrap(),
            crate::train::logits(&model, &altered, 3).unwrap(),
            "{kind}"
        );
        assert!(crate::train::logits(&model, &data, 4).is_err());
        assert_eq!(model.tensors().len(), model.clone().tensors_mut().len());
    }
    assert_eq!(
        "bi-gru".parse::<BaselineKind>().unwrap(),
        BaselineKind::BiGru
    );
}

#[test]
fn every_baseline_trains() {
    let data = toy(24, 4, 3);
    let tc = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    for kind in BaselineKind::ALL {
        let mut model = BaselineParams::init(kind, 4, 4, 1).unwrap();
        let trace = crate::train::fit(&mut model, &data, 4, &tc).unwrap();
        assert!(trace.iter().all(|l| l.is_finite()));
        assert!(trace.last().unwrap() < &trace[0], "{kind}: {trace:?}");
    }
}

fn toy_split() -> SplitData {
    SplitData {
        name: "T1P2".into(),
        train: toy(24, 5, 4),
        test: toy(12, 5, 5),
        weeks: 5,
    }
}

#[test]
fn suites_have_table_shapes() {
    let split = toy_split();
    let exp = Experiment {
        runs: 2,
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        ..Experiment::default()
    };
    let teacher = exp.train_teacher(&split).unwrap();
    let weeks = [3, 4];
    let base = baseline_suite(&split, &teacher.params, &exp, &weeks).unwrap();
    assert_eq!(base.rows.len(), 7 * weeks.len());
    assert!(base.find("T1P2", "RNN-Attention-KD", "1-3").is_some());
    assert!(base.find("T1P2", "Bi-LSTM", "1-4").is_some());
    assert!(base.rows.iter().all(|r| r.runs == 2));

    let abl = ablation_suite(&split, &teacher.params, &exp, &weeks).unwrap();
    assert_eq!(abl.rows.len(), 7 * weeks.len());
    assert!(abl.find("T1P2", "CV+HD", "1-4").is_some());

    let again = ablation_suite(&split, &teacher.params, &exp, &weeks).unwrap();
    assert_eq!(abl.to_csv(), again.to_csv());

    let teachers = teacher_report(&[(split.clone(), teacher.params.clone())]).unwrap();
    assert_eq!(teachers.rows.len(), 1);
    assert_eq!(teachers.rows[0].weeks, "1-5");

    assert!(baseline_suite(&split, &teacher.params, &exp, &[6]).is_err());
}

#[test]
fn report_formats() {
    let mut report = Report::new("Example");
    report.meta("seed", 3);
    let r = MetricsReport::from_runs(
        3,
        vec![Metrics {
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
            weighted_f1: 0.25,
            ..Metrics::default()
        }],
    );
    report.rows.push(ReportRow::new("T19P20", "GRU", "1-3", &r));
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# Example");
    assert_eq!(lines[1], "# seed=3");
    assert_eq!(
        lines[2],
        "split,model,weeks,precision,recall,f1,weighted_f1,runs"
    );
    assert_eq!(
        lines[3],
        format!("T19P20,GRU,1-3,0.5,1,{},0.25,1", 2.0 / 3.0)
    );
    let text = report.to_text();
    assert!(text.contains("T19P20  GRU    1-3"), "{text}");
    assert!(text.contains("0.6667"));
}
