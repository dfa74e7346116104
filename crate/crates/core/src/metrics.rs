//! Per-iteration training records and their CSV encoding.

use serde::{Deserialize, Serialize};

/// Column order of the metrics file. Wall-clock time is kept out of this file
/// (it goes to a separate timing file) so reruns are byte-identical.
pub const METRICS_COLUMNS: [&str; 11] = [
    "iteration",
    "meta_loss",
    "query_metric",
    "l1",
    "frugality_bound",
    "violation",
    "plasticity_soft",
    "hard_overlap",
    "sensitivity",
    "mask_density",
    "task_checksum",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// Mean query loss of the adapted models.
    pub meta_loss: f64,
    /// Mean query MSE (regression) or accuracy (classification).
    pub query_metric: f64,
    /// Masked l1 norm of the shared weights after the iteration's updates.
    pub l1: f64,
    pub frugality_bound: f64,
    pub violation: f64,
    pub plasticity_soft: f64,
    pub hard_overlap: f64,
    pub sensitivity: f64,
    pub mask_density: f64,
    /// Leading 16 hex digits of the digest over this iteration's tasks.
    pub task_checksum: String,
    /// Kept out of serialized output; only timing.csv carries it.
    #[serde(skip)]
    pub wall_ms: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.meta_loss,
            self.query_metric,
            self.l1,
            self.frugality_bound,
            self.violation,
            self.plasticity_soft,
            self.hard_overlap,
            self.sensitivity,
            self.mask_density,
            self.task_checksum
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.meta_loss,
            self.query_metric,
            self.l1,
            self.frugality_bound,
            self.violation,
            self.plasticity_soft,
            self.hard_overlap,
            self.sensitivity,
            self.mask_density,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn timing_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("iteration,wall_ms\n");
    for r in records {
        out.push_str(&format!("{},{:.3}\n", r.iteration, r.wall_ms));
    }
    out
}

/// Parses a metrics file written by [`metrics_csv`]. Wall-clock is not stored
/// there and comes back as zero.
pub fn parse_metrics_csv(text: &str) -> Option<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next()? != METRICS_COLUMNS.join(",") {
        return None;
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != METRICS_COLUMNS.len() {
                return None;
            }
            let num = |i: usize| f[i].parse::<f64>().ok();
            Some(MetricsRecord {
                iteration: f[0].parse().ok()?,
                meta_loss: num(1)?,
                query_metric: num(2)?,
                l1: num(3)?,
                frugality_bound: num(4)?,
                violation: num(5)?,
                plasticity_soft: num(6)?,
                hard_overlap: num(7)?,
                sensitivity: num(8)?,
                mask_density: num(9)?,
                task_checksum: f[10].to_string(),
                wall_ms: 0.0,
            })
        })
        .collect()
}

/// Means over consecutive non-overlapping windows of `width` values; a
/// trailing partial window is dropped.
pub fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks_exact(width.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
