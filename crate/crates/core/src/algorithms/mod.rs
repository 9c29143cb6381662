//! Learners and baselines. Every algorithm consumes exactly the environment's
//! horizon and returns a [`RunTrace`].

mod alg_det;
mod alg_stoch;
mod best_constant;
mod se_tb;

pub use alg_det::alg_det_run;
pub use alg_stoch::{alg_stoch_run, default_repetitions, AlgStochOptions};
pub use best_constant::best_constant_run;
pub use se_tb::{se_tb_run, EpochRecord, EpochSchedule, PairRecord, PoolCatalog, PoolSpec, SeTbOptions};

use serde::{Deserialize, Serialize};

use crate::env::{LossSample, TallyEnv};

/// A contiguous block of steps with a role (exploration, an SE-TB epoch, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Phase {
    pub label: String,
    /// First step, 0-based.
    pub start: usize,
    /// One past the last step.
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMeta {
    pub phases: Vec<Phase>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochRecord>,
    /// Deviations from the textbook procedure that affect this run.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub steps: Vec<LossSample>,
    /// Running total of expected losses, accumulated as steps were taken.
    pub cum_expected: f64,
    pub meta: RunMeta,
}

impl RunTrace {
    pub(crate) fn from_env(algorithm: &str, env: TallyEnv<'_>, meta: RunMeta) -> Self {
        let (steps, cum_expected) = env.into_steps();
        RunTrace {
            algorithm: algorithm.to_string(),
            steps,
            cum_expected,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of expected losses, recomputed from the steps.
    pub fn total_expected(&self) -> f64 {
        self.steps.iter().map(|s| s.expected).sum()
    }

    pub fn actions(&self) -> Vec<crate::env::ActionId> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Which learner to run, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmKind {
    SeTb {
        delta: f64,
        #[serde(default)]
        pool: PoolSpec,
    },
    AlgDet,
    AlgStoch {
        delta: f64,
        /// Overrides the default repetition count.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<usize>,
    },
    BestConstant,
}

impl AlgorithmKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::SeTb { .. } => "se_tb",
            AlgorithmKind::AlgDet => "alg_det",
            AlgorithmKind::AlgStoch { .. } => "alg_stoch",
            AlgorithmKind::BestConstant => "best_constant",
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match self {
            AlgorithmKind::SeTb { delta, .. } | AlgorithmKind::AlgStoch { delta, .. } => Some(*delta),
            _ => None,
        }
    }
}
