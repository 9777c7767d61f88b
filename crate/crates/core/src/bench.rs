//! Batch comparison of the baseline attack against its sparse variants.
//!
//! Every variant attacks the same samples with the same per-sample seeds;
//! each attack has its own query session. Summaries are computed after all
//! attacks finish, so the result does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack, AttackConfig, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, aggregate_attempted, AttemptedMeans, MetricRow, MetricsSummary};
use crate::victim::{QueryBreakdown, QueryRecord, QuerySession, Victim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No masks.
    Baseline,
    /// Key-frame selection only.
    Temporal,
    /// Key-frame selection and salient regions.
    TemporalSpatial,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Temporal, Variant::TemporalSpatial];

    pub fn apply(self, base: &AttackConfig) -> AttackConfig {
        let mut c = base.clone();
        c.enable_temporal = self != Variant::Baseline;
        c.enable_spatial = self == Variant::TemporalSpatial;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    /// Attacks run concurrently.
    pub jobs: usize,
    /// Attack only the first `max_videos` samples.
    pub max_videos: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { variants: Variant::ALL.to_vec(), jobs: 1, max_videos: None }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("bench needs at least one variant".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidParameter("jobs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Seed for sample `index`, shared by all variants.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackError {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub rows: Vec<MetricRow>,
    pub summary: MetricsSummary,
    pub summary_all_attempted: AttemptedMeans,
    /// Queries per purpose, summed over the batch.
    pub breakdown: QueryBreakdown,
    /// Fraction of all queries spent ranking and pruning frames.
    pub key_frame_query_share: f64,
    pub errors: Vec<AttackError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_logs: Option<Vec<Vec<QueryRecord>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: Variant,
    pub mq_baseline: f64,
    pub mq_variant: f64,
    /// `1 − mq_variant / mq_baseline`.
    pub query_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: serde_json::Value,
    pub variants: Vec<VariantReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<Comparison>>,
}

impl BenchReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Outcome {
    row: MetricRow,
    breakdown: QueryBreakdown,
    error: Option<String>,
    log: Option<Vec<QueryRecord>>,
}

fn run_one(victim: &dyn Victim, dataset: &Dataset, config: &AttackConfig, index: usize, log: bool) -> Outcome {
    let sample = &dataset.samples()[index];
    let mut session = QuerySession::new(victim);
    if log {
        session = session.with_logging();
    }
    let config = AttackConfig { seed: sample_seed(config.seed, index), ..config.clone() };
    let result = attack(&mut session, &sample.video, sample.label, &config, dataset);
    let log = session.take_log();
    match result {
        Ok(r) => Outcome { row: r.metric_row(&sample.id), breakdown: r.breakdown, error: None, log },
        Err(e) => Outcome {
            row: MetricRow {
                id: sample.id.clone(),
                success: false,
                queries: session.count(),
                map: None,
                map_masked: None,
                sparsity: None,
            },
            breakdown: session.breakdown(),
            error: Some(e.to_string()),
            log,
        },
    }
}

fn add(a: QueryBreakdown, b: QueryBreakdown) -> QueryBreakdown {
    QueryBreakdown {
        clean: a.clean + b.clean,
        start: a.start + b.start,
        ranking: a.ranking + b.ranking,
        prune: a.prune + b.prune,
        init: a.init + b.init,
        gradient: a.gradient + b.gradient,
        line_search: a.line_search + b.line_search,
        verify: a.verify + b.verify,
        other: a.other + b.other,
    }
}

/// Attack every sample (up to `max_videos`) under each variant.
pub fn run_bench(
    victim: &dyn Victim,
    dataset: &Dataset,
    attack_config: &AttackConfig,
    bench: &BenchConfig,
    log_queries: bool,
    config_echo: serde_json::Value,
) -> Result<BenchReport> {
    bench.validate()?;
    attack_config.validate()?;
    let n = bench.max_videos.map_or(dataset.len(), |m| m.min(dataset.len()));
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(bench.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut variants = Vec::with_capacity(bench.variants.len());
    for &variant in &bench.variants {
        let config = variant.apply(attack_config);
        let outcomes: Vec<Outcome> =
            pool.install(|| (0..n).into_par_iter().map(|i| run_one(victim, dataset, &config, i, log_queries)).collect());
        let rows: Vec<MetricRow> = outcomes.iter().map(|o| o.row.clone()).collect();
        let breakdown = outcomes.iter().map(|o| o.breakdown).fold(QueryBreakdown::default(), add);
        let total = breakdown.total();
        variants.push(VariantReport {
            variant,
            summary: aggregate(&rows)?,
            summary_all_attempted: aggregate_attempted(&rows)?,
            rows,
            breakdown,
            key_frame_query_share: if total == 0 { 0.0 } else { breakdown.key_frame_search() as f64 / total as f64 },
            errors: outcomes
                .iter()
                .filter_map(|o| o.error.as_ref().map(|e| AttackError { id: o.row.id.clone(), error: e.clone() }))
                .collect(),
            query_logs: log_queries.then(|| outcomes.into_iter().map(|o| o.log.unwrap_or_default()).collect()),
        });
    }

    let comparison = compare(&variants);
    Ok(BenchReport { config: config_echo, variants, comparison })
}

/// Query reduction of each non-baseline variant relative to the baseline;
/// absent unless the baseline and at least one other variant ran.
pub fn compare(variants: &[VariantReport]) -> Option<Vec<Comparison>> {
    let base = variants.iter().find(|v| v.variant == Variant::Baseline)?;
    let others: Vec<Comparison> = variants
        .iter()
        .filter(|v| v.variant != Variant::Baseline)
        .map(|v| Comparison {
            variant: v.variant,
            mq_baseline: base.summary.median_queries,
            mq_variant: v.summary.median_queries,
            query_reduction: 1.0 - v.summary.median_queries / base.summary.median_queries,
        })
        .collect();
    (!others.is_empty()).then_some(others)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticData, SyntheticSpec};
    use crate::tensor::Dims;

    fn quick() -> (SyntheticData, AttackConfig) {
        let spec = SyntheticSpec {
            samples: 6,
            num_classes: 2,
            dims: Dims { t: 4, w: 8, h: 8, c: 1 },
            active_frames: Some(2),
            ..Default::default()
        };
        let mut config = AttackConfig { n_init_candidates: 2, ..Default::default() };
        config.optimizer.max_iterations = 3;
        config.optimizer.n_samples = 4;
        (SyntheticData::generate(&spec).unwrap(), config)
    }

    #[test]
    fn variants_and_comparison() {
        let (data, config) = quick();
        let v = data.victim().unwrap();
        let bench = BenchConfig { max_videos: Some(3), ..Default::default() };
        let r = run_bench(v.as_ref(), &data.dataset, &config, &bench, false, serde_json::Value::Null).unwrap();
        assert_eq!(r.variants.len(), 3);
        let cmp = r.comparison.as_ref().unwrap();
        assert_eq!(cmp.len(), 2);
        for c in cmp {
            let mq = r.variant(c.variant).unwrap().summary.median_queries;
            assert_eq!(c.query_reduction, 1.0 - mq / r.variant(Variant::Baseline).unwrap().summary.median_queries);
        }
        assert_eq!(r.variant(Variant::Baseline).unwrap().breakdown.key_frame_search(), 0);
        assert!(r.variant(Variant::Temporal).unwrap().key_frame_query_share > 0.0);
    }

    #[test]
    fn single_variant_has_no_comparison() {
        let (data, config) = quick();
        let v = data.victim().unwrap();
        let bench = BenchConfig { variants: vec![Variant::TemporalSpatial], max_videos: Some(2), ..Default::default() };
        let r = run_bench(v.as_ref(), &data.dataset, &config, &bench, true, serde_json::Value::Null).unwrap();
        assert!(r.comparison.is_none());
        let logs = r.variants[0].query_logs.as_ref().unwrap();
        assert_eq!(logs[0].len() as u64, r.variants[0].rows[0].queries);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (data, config) = quick();
        let v = data.victim().unwrap();
        let seq = BenchConfig { max_videos: Some(4), ..Default::default() };
        let par = BenchConfig { jobs: 3, ..seq.clone() };
        let a = run_bench(v.as_ref(), &data.dataset, &config, &seq, false, serde_json::Value::Null).unwrap();
        let b = run_bench(v.as_ref(), &data.dataset, &config, &par, false, serde_json::Value::Null).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (data, config) = quick();
        let v = data.victim().unwrap();
        let empty = Dataset::default();
        let r = run_bench(v.as_ref(), &empty, &config, &BenchConfig::default(), false, serde_json::Value::Null);
        assert!(matches!(r, Err(Error::EmptyBatch)));
    }
}
