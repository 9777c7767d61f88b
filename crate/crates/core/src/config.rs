//! Versioned experiment configuration.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "victim": {"kind": "dataset"},
//!   "dataset": {"kind": "synthetic", "seed": 0, "samples": 20},
//!   "attack": {"mode": {"kind": "untargeted"}, "omega": 3, "phi": 0.6},
//!   "bench": {"variants": ["baseline", "temporal", "temporal_spatial"], "jobs": 1},
//!   "output": "out",
//!   "log_queries": false
//! }
//! ```
//!
//! Every key except `schema` is optional; unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, Dataset};
use crate::bench::BenchConfig;
use crate::error::{Error, Result};
use crate::synthetic::{load_dataset, load_victim, SyntheticData, SyntheticSpec};
use crate::victim::{RemoteVictim, Victim};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "VIDATTACK_CONFIG";

/// Where the classifier under attack lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VictimSpec {
    /// The linear victim that belongs to the dataset (`victim.json` of a
    /// dataset directory, or the generator's own victim).
    Dataset,
    /// A victim served over HTTP.
    Remote { url: String },
}

/// Where the videos come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// A directory written by `gen-dataset`.
    Dir { path: PathBuf },
    /// Generated in memory.
    Synthetic(SyntheticSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub victim: VictimSpec,
    pub dataset: DatasetSpec,
    pub attack: AttackConfig,
    pub bench: BenchConfig,
    /// Output file or directory, depending on the command.
    pub output: Option<PathBuf>,
    /// Record every query (iteration and purpose) in the reports.
    pub log_queries: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            victim: VictimSpec::Dataset,
            dataset: DatasetSpec::default(),
            attack: AttackConfig::default(),
            bench: BenchConfig::default(),
            output: None,
            log_queries: false,
        }
    }
}

/// Dataset and victim ready to attack.
pub struct Resolved {
    pub dataset: Dataset,
    pub victim: Arc<dyn Victim>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("schema").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Format(format!("unsupported config schema {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Format("config must declare \"schema\": 1".into())),
        }
        let config: ExperimentConfig = serde_json::from_value(raw)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_json(&text)?;
        // relative dataset paths are relative to the config file
        if let (DatasetSpec::Dir { path: p }, Some(base)) = (&mut config.dataset, path.parent()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        self.bench.validate()?;
        if let DatasetSpec::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let (dataset, own_victim) = match &self.dataset {
            DatasetSpec::Dir { path } => (load_dataset(path)?, None),
            DatasetSpec::Synthetic(spec) => {
                let data = SyntheticData::generate(spec)?;
                let v = data.victim()?;
                (data.dataset, Some(v))
            }
        };
        let victim = match (&self.victim, own_victim, &self.dataset) {
            (VictimSpec::Remote { url }, _, _) => {
                let dims = dataset.dims().ok_or(Error::EmptyBatch)?;
                Arc::new(RemoteVictim::new(url, dims)) as Arc<dyn Victim>
            }
            (VictimSpec::Dataset, Some(v), _) => v,
            (VictimSpec::Dataset, None, DatasetSpec::Dir { path }) => load_victim(path)?,
            (VictimSpec::Dataset, None, DatasetSpec::Synthetic(_)) => unreachable!("synthetic data carries its victim"),
        };
        Ok(Resolved { dataset, victim })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let c = ExperimentConfig::from_json(r#"{"schema": 1}"#).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn schema_is_required_and_checked() {
        assert!(matches!(ExperimentConfig::from_json("{}"), Err(Error::Format(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"schema": 2}"#), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "atack": {}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "attack": {"phii": 0.5}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "attack": {"optimizer": {"betta": 1}}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "dataset": {"kind": "synthetic", "sead": 1}}"#).is_err());
    }

    #[test]
    fn nested_values_parse() {
        let c = ExperimentConfig::from_json(
            r#"{"schema": 1,
                "victim": {"kind": "remote", "url": "http://127.0.0.1:9"},
                "dataset": {"kind": "synthetic", "seed": 4, "samples": 6},
                "attack": {"omega": "inf", "phi": 0.4, "optimizer": {"max_iterations": 7, "query_budget": 100}},
                "bench": {"variants": ["baseline"], "jobs": 2}}"#,
        )
        .unwrap();
        assert!(c.attack.omega().value().is_infinite());
        assert_eq!(c.attack.optimizer.max_iterations, 7);
        assert_eq!(c.attack.optimizer.query_budget, Some(100));
        match &c.dataset {
            DatasetSpec::Synthetic(s) => assert_eq!((s.seed, s.samples), (4, 6)),
            other => panic!("{other:?}"),
        }
        // round trip
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "attack": {"phi": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "attack": {"n_init_candidates": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema": 1, "bench": {"jobs": 0}}"#).is_err());
    }
}
