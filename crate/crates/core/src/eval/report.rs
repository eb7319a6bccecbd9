//! Table-shaped reports as CSV and aligned text.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MeanMetrics, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub split: String,
    pub model: String,
    /// Week range label such as `1-3`.
    pub weeks: String,
    pub mean: MeanMetrics,
    pub runs: usize,
}

impl ReportRow {
    pub fn new(split: &str, model: &str, weeks: &str, report: &MetricsReport) -> Self {
        ReportRow {
            split: split.to_string(),
            model: model.to_string(),
            weeks: weeks.to_string(),
            mean: report.mean,
            runs: report.run_count(),
        }
    }
}

/// Rows plus `key=value` metadata. No timestamps, so reruns with the same
/// inputs produce identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

const COLUMNS: [&str; 8] = [
    "split",
    "model",
    "weeks",
    "precision",
    "recall",
    "f1",
    "weighted_f1",
    "runs",
];

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            title: title.into(),
            ..Report::default()
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn find(&self, split: &str, model: &str, weeks: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.model == model && r.weeks == weeks)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.split,
                r.model,
                r.weeks,
                r.mean.precision,
                r.mean.recall,
                r.mean.f1,
                r.mean.weighted_f1,
                r.runs
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.split.clone(),
                    r.model.clone(),
                    r.weeks.clone(),
                    format!("{:.4}", r.mean.precision),
                    format!("{:.4}", r.mean.recall),
                    format!("{:.4}", r.mean.f1),
                    format!("{:.4}", r.mean.weighted_f1),
                    r.runs.to_string(),
                ]
            })
            .collect();
        let mut widths = COLUMNS.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!("{}\n", self.title);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "  {k}: {v}");
        }
        out.push('\n');
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 3 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&mut out, &COLUMNS);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(
            &mut out,
            &rule.iter().map(String::as_str).collect::<Vec<_>>(),
        );
        for row in &cells {
            line(
                &mut out,
                &row.iter().map(String::as_str).collect::<Vec<_>>(),
            );
        }
        out
    }
}
