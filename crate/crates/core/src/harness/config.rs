//! Experiment configuration (JSON, versioned, unknown fields rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, PoolSpec};
use crate::env::FeedbackModel;
use crate::error::{Error, Result};
use crate::instances::InstanceSpec;
use crate::planning::{DEFAULT_ORACLE_BUDGET, DEFAULT_POLICY_CAP, DEFAULT_STATE_CAP};

pub const SCHEMA: &str = "tallyband.experiment/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    SeTb,
    AlgDet,
    AlgStoch,
    BestConstant,
}

/// One algorithm entry. Parameters that do not apply to `name` are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub name: AlgorithmName,
    /// Name used in output files; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSpec>,
    /// Sweep count override for alg_stoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackModel>,
}

impl AlgorithmEntry {
    pub fn new(kind: AlgorithmKind) -> Self {
        let (name, delta, pool, r) = match kind {
            AlgorithmKind::SeTb { delta, pool } => (AlgorithmName::SeTb, Some(delta), Some(pool), None),
            AlgorithmKind::AlgDet => (AlgorithmName::AlgDet, None, None, None),
            AlgorithmKind::AlgStoch { delta, r } => (AlgorithmName::AlgStoch, Some(delta), None, r),
            AlgorithmKind::BestConstant => (AlgorithmName::BestConstant, None, None, None),
        };
        AlgorithmEntry {
            name,
            label: None,
            delta,
            pool,
            r,
            feedback: None,
        }
    }

    pub fn kind(&self) -> Result<AlgorithmKind> {
        let reject = |present: bool, field: &str| {
            if present {
                Err(Error::Config(format!(
                    "field `{field}` does not apply to {:?}",
                    self.name
                )))
            } else {
                Ok(())
            }
        };
        let delta = || {
            let d = self
                .delta
                .ok_or_else(|| Error::Config(format!("{:?} needs `delta`", self.name)))?;
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("delta must lie in (0, 1), got {d}")));
            }
            Ok(d)
        };
        match self.name {
            AlgorithmName::SeTb => {
                reject(self.r.is_some(), "r")?;
                Ok(AlgorithmKind::SeTb {
                    delta: delta()?,
                    pool: self.pool.unwrap_or_default(),
                })
            }
            AlgorithmName::AlgStoch => {
                reject(self.pool.is_some(), "pool")?;
                Ok(AlgorithmKind::AlgStoch {
                    delta: delta()?,
                    r: self.r,
                })
            }
            AlgorithmName::AlgDet | AlgorithmName::BestConstant => {
                reject(self.delta.is_some(), "delta")?;
                reject(self.pool.is_some(), "pool")?;
                reject(self.r.is_some(), "r")?;
                Ok(if self.name == AlgorithmName::AlgDet {
                    AlgorithmKind::AlgDet
                } else {
                    AlgorithmKind::BestConstant
                })
            }
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            self.kind()
                .map(|k| k.name().to_string())
                .unwrap_or_else(|_| format!("{:?}", self.name))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub master: u64,
    /// Run seeds `0..count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    /// Run exactly these seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
}

impl SeedSpec {
    pub fn count(master: u64, count: u64) -> Self {
        SeedSpec {
            master,
            count: Some(count),
            list: None,
        }
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.count, &self.list) {
            (Some(n), None) if *n > 0 => Ok((0..*n).collect()),
            (None, Some(list)) if !list.is_empty() => Ok(list.clone()),
            _ => Err(Error::Config(
                "seeds need exactly one of a positive `count` or a nonempty `list`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_state_cap")]
    pub state_cap: u64,
    #[serde(default = "default_policy_cap")]
    pub policy_cap: u64,
    #[serde(default = "default_oracle_budget")]
    pub oracle_budget: u64,
}

fn default_state_cap() -> u64 {
    DEFAULT_STATE_CAP
}
fn default_policy_cap() -> u64 {
    DEFAULT_POLICY_CAP
}
fn default_oracle_budget() -> u64 {
    DEFAULT_ORACLE_BUDGET
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            state_cap: DEFAULT_STATE_CAP,
            policy_cap: DEFAULT_POLICY_CAP,
            oracle_budget: DEFAULT_ORACLE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub instances: Vec<InstanceSpec>,
    pub algorithms: Vec<AlgorithmEntry>,
    pub horizons: Vec<usize>,
    pub seeds: SeedSpec,
    /// Default feedback model; alg_det falls back to deterministic and every
    /// other algorithm to Bernoulli when neither this nor the entry sets one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackModel>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Record per-cell wall time. Off by default because timings make the
    /// summary non-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(
        instances: Vec<InstanceSpec>,
        algorithms: Vec<AlgorithmEntry>,
        horizons: Vec<usize>,
        seeds: SeedSpec,
    ) -> Self {
        ExperimentConfig {
            schema: SCHEMA.to_string(),
            instances,
            algorithms,
            horizons,
            seeds,
            feedback: None,
            caps: Caps::default(),
            output: None,
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema `{}`, expected `{SCHEMA}`",
                self.schema
            )));
        }
        if self.instances.is_empty() {
            return Err(Error::Config("config lists no instances".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("config lists no algorithms".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "horizons must be a nonempty list of positive integers".into(),
            ));
        }
        self.seeds.seeds()?;
        for inst in &self.instances {
            inst.validate()?;
        }
        let mut ids = self.instance_ids();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("instance ids must be unique".into()));
        }
        let mut labels = Vec::new();
        for alg in &self.algorithms {
            alg.kind()?;
            labels.push(alg.label());
        }
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(
                "algorithm labels must be unique; set `label` to disambiguate".into(),
            ));
        }
        Ok(())
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, s)| s.id.clone().unwrap_or_else(|| format!("{}{i}", s.family.as_str())))
            .collect()
    }

    pub fn feedback_for(&self, alg: &AlgorithmEntry) -> FeedbackModel {
        alg.feedback.or(self.feedback).unwrap_or(match alg.name {
            AlgorithmName::AlgDet => FeedbackModel::Deterministic,
            _ => FeedbackModel::Bernoulli,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "schema": "tallyband.experiment/v1",
        "instances": [{"family": "alternating"}, {"id": "g", "family": "gap", "K": 2, "m": 4, "epsilon": 0.15, "seed": 1}],
        "algorithms": [
            {"name": "se_tb", "delta": 0.1, "pool": {"period_limited": 5}},
            {"name": "alg_stoch", "delta": 0.1},
            {"name": "alg_det"},
            {"name": "best_constant"}
        ],
        "horizons": [64, 256],
        "seeds": {"master": 7, "count": 3}
    }"#;

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.instance_ids(), vec!["alternating0", "g"]);
        assert_eq!(
            cfg.algorithms[0].kind().unwrap(),
            AlgorithmKind::SeTb {
                delta: 0.1,
                pool: PoolSpec::PeriodLimited(5)
            }
        );
        assert_eq!(cfg.feedback_for(&cfg.algorithms[2]), FeedbackModel::Deterministic);
        assert_eq!(cfg.feedback_for(&cfg.algorithms[0]), FeedbackModel::Bernoulli);
        assert_eq!(cfg.seeds.seeds().unwrap(), vec![0, 1, 2]);
        let again = ExperimentConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            SAMPLE.replace("tallyband.experiment/v1", "v0"),
            SAMPLE.replace("\"horizons\"", "\"bogus\": 1, \"horizons\""),
            SAMPLE.replace("[64, 256]", "[0]"),
            SAMPLE.replace("{\"name\": \"alg_det\"}", "{\"name\": \"alg_det\", \"delta\": 0.1}"),
            SAMPLE.replace("\"delta\": 0.1, \"pool\"", "\"delta\": 1.5, \"pool\""),
            SAMPLE.replace("\"count\": 3", "\"count\": 3, \"list\": [1]"),
            SAMPLE.replace("{\"name\": \"best_constant\"}", "{\"name\": \"alg_det\"}"),
        ];
        for text in bad {
            assert!(
                matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
