//! Evaluation metrics and batch reports.
//!
//! * FR — fraction of attempted attacks that fooled the victim.
//! * MQ — median query count over all attempted attacks.
//! * MAP — mean absolute perturbation over every entry of the video.
//! * MAP* — mean absolute perturbation over the masked entries.
//! * S — sparsity, `1 − mean_t φ_t` with `φ_t` the ones fraction of frame `t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, VideoTensor};

/// Mean of `|value|` over all entries.
pub fn map(perturbation: &VideoTensor) -> f64 {
    let s = perturbation.as_slice();
    s.iter().map(|v| v.abs()).sum::<f64>() / s.len() as f64
}

/// Mean of `|value|` over the entries where `mask` is set.
pub fn map_masked(perturbation: &VideoTensor, mask: &BinaryMask) -> Result<f64> {
    if perturbation.dims() != mask.dims() {
        return Err(Error::ShapeMismatch { expected: perturbation.dims(), actual: mask.dims() });
    }
    let ones = mask.count_ones();
    if ones == 0 {
        return Err(Error::EmptyMask);
    }
    let sum: f64 = perturbation
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .sum();
    Ok(sum / ones as f64)
}

/// `1 − (1/T) Σ_t φ_t`. Frames are equally sized, so the mean of the
/// per-frame fractions is the overall ones fraction, computed exactly from
/// integer counts.
pub fn sparsity(mask: &BinaryMask) -> f64 {
    1.0 - mask.count_ones() as f64 / mask.dims().len() as f64
}

/// Median with the even-count rule (mean of the two middle values).
pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] as f64 } else { (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0 })
}

/// One attacked sample. Perturbation metrics are absent when the attack
/// produced no perturbation at all (e.g. no viable initial direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub success: bool,
    pub queries: u64,
    pub map: Option<f64>,
    pub map_masked: Option<f64>,
    pub sparsity: Option<f64>,
}

/// Aggregates in report order: FR, MQ, MAP, MAP*, S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(rename = "fr")]
    pub fooling_rate: f64,
    #[serde(rename = "mq")]
    pub median_queries: f64,
    #[serde(rename = "map")]
    pub map_mean: Option<f64>,
    #[serde(rename = "map_masked")]
    pub map_masked_mean: Option<f64>,
    #[serde(rename = "s")]
    pub sparsity_mean: Option<f64>,
}

/// MAP, MAP* and S averaged over every row that has them, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptedMeans {
    pub map: Option<f64>,
    pub map_masked: Option<f64>,
    pub s: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// FR and MQ over all rows; MAP, MAP* and S over successful rows.
pub fn aggregate(rows: &[MetricRow]) -> Result<MetricsSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let queries: Vec<u64> = rows.iter().map(|r| r.queries).collect();
    // sort for order invariance of the floating-point sums
    let mut ok: Vec<&MetricRow> = rows.iter().filter(|r| r.success).collect();
    ok.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(MetricsSummary {
        fooling_rate: ok.len() as f64 / rows.len() as f64,
        median_queries: median(&queries).expect("non-empty"),
        map_mean: mean(ok.iter().filter_map(|r| r.map)),
        map_masked_mean: mean(ok.iter().filter_map(|r| r.map_masked)),
        sparsity_mean: mean(ok.iter().filter_map(|r| r.sparsity)),
    })
}

pub fn aggregate_attempted(rows: &[MetricRow]) -> Result<AttemptedMeans> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut all: Vec<&MetricRow> = rows.iter().collect();
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(AttemptedMeans {
        map: mean(all.iter().filter_map(|r| r.map)),
        map_masked: mean(all.iter().filter_map(|r| r.map_masked)),
        s: mean(all.iter().filter_map(|r| r.sparsity)),
    })
}

/// Batch report: `{"config", "rows", "summary", "summary_all_attempted"}`,
/// plus `"details"` for single attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    pub rows: Vec<MetricRow>,
    pub summary: MetricsSummary,
    pub summary_all_attempted: AttemptedMeans,
    /// Free-form per-run detail (single attacks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl Report {
    pub fn new(config: serde_json::Value, rows: Vec<MetricRow>) -> Result<Self> {
        let summary = aggregate(&rows)?;
        let summary_all_attempted = aggregate_attempted(&rows)?;
        Ok(Report { config, rows, summary, summary_all_attempted, details: None })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Flat CSV of the rows (header `id,success,queries,map,map_masked,sparsity`).
pub fn write_rows_csv(w: impl Write, rows: &[MetricRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
