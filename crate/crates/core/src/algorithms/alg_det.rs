//! Query-then-plan for deterministic feedback: play each action `m` times in a
//! row to read off its whole row of `h`, then follow an exact plan.

use super::{Phase, RunMeta, RunTrace};
use crate::env::{FeedbackModel, TallyEnv, TallyKernel};
use crate::error::{Error, Result};
use crate::planning::{dp_optimal, PlanOptions};

pub fn alg_det_run(mut env: TallyEnv<'_>, plan: PlanOptions) -> Result<RunTrace> {
    if env.model() != FeedbackModel::Deterministic {
        return Err(Error::Misuse(
            "alg_det assumes deterministic feedback; use alg_stoch or se_tb for noisy losses".into(),
        ));
    }
    let (k, m) = (env.k(), env.m());
    if env.horizon() < m * k + 1 {
        return Err(Error::Config(format!(
            "alg_det needs T >= mK + 1 = {}, got {}",
            m * k + 1,
            env.horizon()
        )));
    }
    let mut rows = vec![vec![0.0; m]; k];
    for (x, row) in env.oracle_kernel().actions().zip(rows.iter_mut()) {
        for _ in 0..m {
            let sample = env.play(x)?;
            row[sample.tally as usize - 1] = sample.observed;
        }
    }
    let learned = TallyKernel::from_rows(rows)?;
    let explore_end = env.elapsed();
    let plan = dp_optimal(&learned, env.remaining(), env.window(), plan)?;
    for a in plan.actions {
        env.play(a)?;
    }
    let meta = RunMeta {
        phases: vec![
            Phase {
                label: "explore".into(),
                start: 0,
                end: explore_end,
            },
            Phase {
                label: "exploit".into(),
                start: explore_end,
                end: env.elapsed(),
            },
        ],
        ..RunMeta::default()
    };
    Ok(RunTrace::from_env("alg_det", env, meta))
}
