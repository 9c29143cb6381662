//! Tallying bandits: an environment whose losses depend on how often each
//! action was played in the last `m` steps, exact planners over the window
//! MDP, successive elimination over cyclic policies and its baselines, and an
//! experiment harness that measures complete policy regret.

pub mod algorithms;
pub mod env;
pub mod error;
pub mod exec;
pub mod harness;
pub mod instances;
pub mod planning;
pub mod rng;

pub use algorithms::{AlgorithmKind, RunTrace};
pub use env::{step, ActionId, FeedbackModel, LossSample, TallyEnv, TallyKernel, TallyWindow};
pub use error::{Error, Result};
pub use exec::Execution;
pub use rng::RandomStream;
