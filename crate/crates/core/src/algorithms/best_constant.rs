//! Best constant action in hindsight. This is a comparator with full kernel
//! access, not a learner.

use super::{Phase, RunMeta, RunTrace};
use crate::env::{TallyEnv, TallyWindow};
use crate::error::Result;

pub fn best_constant_run(mut env: TallyEnv<'_>) -> Result<RunTrace> {
    let kernel = env.oracle_kernel();
    let horizon = env.horizon();
    let empty = TallyWindow::empty(kernel.m());
    let mut best = None;
    for x in kernel.actions() {
        let loss = kernel.replay_loss(&empty, &vec![x; horizon]);
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((x, loss));
        }
    }
    let (x, _) = best.expect("K >= 2");
    while env.remaining() > 0 {
        env.play(x)?;
    }
    let meta = RunMeta {
        phases: vec![Phase {
            label: format!("constant{x}"),
            start: 0,
            end: horizon,
        }],
        ..RunMeta::default()
    };
    Ok(RunTrace::from_env("best_constant", env, meta))
}
