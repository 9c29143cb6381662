//! Explore-then-exploit for noisy feedback.
//!
//! Exploration runs `r` sweeps. In a sweep, each action `x` is preceded by `m`
//! steps of a different action, which clears `x` from the window, and is then
//! played `m` times in a row, yielding one sample of each `h_x(1..=m)`. The
//! remaining steps follow an exact plan for the empirical kernel.

use super::{Phase, RunMeta, RunTrace};
use crate::env::{ActionId, TallyEnv, TallyKernel};
use crate::error::{Error, Result};
use crate::planning::{dp_optimal, PlanOptions};

#[derive(Debug, Clone, Copy, Default)]
pub struct AlgStochOptions {
    pub plan: PlanOptions,
    /// Fixed number of sweeps instead of [`default_repetitions`].
    pub repetitions: Option<usize>,
}

/// `ceil((T / 2mK)^(2/3) * ln(2mK/delta)^(1/3))`.
pub fn default_repetitions(k: usize, m: usize, horizon: usize, delta: f64) -> usize {
    let sweep = (2 * m * k) as f64;
    let r = (horizon as f64 / sweep).powf(2.0 / 3.0) * (sweep / delta).ln().cbrt();
    r.ceil().max(1.0) as usize
}

pub fn alg_stoch_run(mut env: TallyEnv<'_>, delta: f64, opts: AlgStochOptions) -> Result<RunTrace> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    let (k, m, horizon) = (env.k(), env.m(), env.horizon());
    let sweep = 2 * m * k;
    if horizon < sweep {
        return Err(Error::Config(format!(
            "alg_stoch needs T >= 2mK = {sweep} for one exploration sweep, got {horizon}"
        )));
    }
    let mut meta = RunMeta::default();
    let mut reps = opts
        .repetitions
        .unwrap_or_else(|| default_repetitions(k, m, horizon, delta));
    if reps == 0 {
        return Err(Error::Config("alg_stoch needs at least one sweep".into()));
    }
    if reps * sweep > horizon {
        reps = horizon / sweep;
        meta.flags.push(format!("repetitions_clamped:{reps}"));
    }

    let mut sums = vec![0.0; k * m];
    for _ in 0..reps {
        for xi in 1..=k as u32 {
            let x = ActionId::new(xi)?;
            let flush = ActionId::new(xi % k as u32 + 1)?;
            for _ in 0..m {
                env.play(flush)?;
            }
            for _ in 0..m {
                let s = env.play(x)?;
                sums[(xi as usize - 1) * m + s.tally as usize - 1] += s.observed;
            }
        }
    }
    let explore_end = env.elapsed();
    let learned = TallyKernel::from_fn(k, m, |x, y| sums[(x as usize - 1) * m + y - 1] / reps as f64)?;
    let plan = dp_optimal(&learned, env.remaining(), env.window(), opts.plan)?;
    for a in plan.actions {
        env.play(a)?;
    }
    meta.phases = vec![
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
    ];
    Ok(RunTrace::from_env("alg_stoch", env, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::FeedbackModel;
    use crate::instances::{gen_alternating, gen_random};
    use crate::rng::RandomStream;

    #[test]
    fn repetition_formula() {
        // (2025/16)^(2/3) * ln(160)^(1/3) = 25.21 * 1.719 = 43.3
        assert_eq!(default_repetitions(2, 4, 2025, 0.1), 44);
        assert_eq!(default_repetitions(2, 1, 4, 0.5), 2);
    }

    #[test]
    fn sweeps_sample_every_tally_once() {
        // With zero noise the empirical kernel is the true one, so the
        // exploitation phase is exactly optimal from where exploration ended.
        for seed in 0..5 {
            let inst = gen_random(3, 3, &mut RandomStream::new(seed, 0)).unwrap();
            let env = TallyEnv::new(&inst.kernel, FeedbackModel::Deterministic, 300, RandomStream::new(0, 0));
            let opts = AlgStochOptions {
                repetitions: Some(1),
                ..Default::default()
            };
            let trace = alg_stoch_run(env, 0.1, opts).unwrap();
            assert_eq!(trace.len(), 300);
            let explore_end = trace.meta.phases[0].end;
            assert_eq!(explore_end, 18);
            for (i, s) in trace.steps[..18].iter().enumerate() {
                let block = i / 3;
                if block % 2 == 1 {
                    assert_eq!(s.tally as usize, i % 3 + 1);
                }
            }
            let mut w = crate::TallyWindow::empty(3);
            for s in &trace.steps[..18] {
                w.push_and_tally(s.action);
            }
            let best = dp_optimal(&inst.kernel, 300 - 18, &w, PlanOptions::default())
                .unwrap()
                .value;
            let got: f64 = trace.steps[18..].iter().map(|s| s.expected).sum();
            assert!((got - best).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_bernoulli_matches_deterministic() {
        let inst = gen_alternating();
        let run = |model| {
            let env = TallyEnv::new(&inst.kernel, model, 200, RandomStream::new(4, 0));
            alg_stoch_run(env, 0.1, AlgStochOptions::default()).unwrap()
        };
        let a = run(FeedbackModel::Deterministic);
        let b = run(FeedbackModel::Bernoulli);
        assert_eq!(a.actions(), b.actions());
        assert_eq!(a.cum_expected, b.cum_expected);
    }

    #[test]
    fn clamps_and_rejects() {
        let inst = gen_alternating();
        let env = TallyEnv::new(&inst.kernel, FeedbackModel::Bernoulli, 20, RandomStream::new(0, 0));
        let trace = alg_stoch_run(
            env,
            0.1,
            AlgStochOptions {
                repetitions: Some(5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(trace.meta.flags, vec!["repetitions_clamped:2".to_string()]);
        assert_eq!(trace.len(), 20);
        let env = TallyEnv::new(&inst.kernel, FeedbackModel::Bernoulli, 7, RandomStream::new(0, 0));
        assert!(matches!(
            alg_stoch_run(env, 0.1, AlgStochOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
