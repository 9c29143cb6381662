//! Successive elimination over cyclic policies.
//!
//! The candidate set is every period-`L` policy, `L = floor(sqrt(T))`. Epoch
//! `s` estimates each `h_x(y)` by running, for every pair `(x, y)`, the
//! surviving policy that visits that pair most often: `n_s` periods to wash
//! out the history, then `n_s` recorded periods. Policy means are estimated
//! from these shared per-pair averages, and any policy more than `2 C_s`
//! above the best estimate is dropped.

use serde::{Deserialize, Serialize};

use super::{Phase, RunMeta, RunTrace};
use crate::env::{ActionId, TallyEnv};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::planning::{bounded_pow, cycle_length, n_xy, CyclicPolicy, DEFAULT_POLICY_CAP};

/// Which cyclic policies start in the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSpec {
    /// All `K^L` period-`L` policies.
    #[default]
    Full,
    /// The `K^p` period-`p` policies, each tiled to length `L`.
    PeriodLimited(usize),
}

/// Epoch constants for horizon `T` with `L = floor(sqrt(T))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochSchedule {
    pub k: usize,
    pub m: usize,
    pub period: usize,
    pub delta: f64,
    /// Number of epochs, at least 1.
    pub epochs: usize,
}

impl EpochSchedule {
    pub fn new(k: usize, m: usize, horizon: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
        }
        let period = cycle_length(horizon);
        if m > period {
            return Err(Error::Unsupported(format!(
                "memory m = {m} exceeds floor(sqrt(T)) = {period}"
            )));
        }
        let raw = (period as f64 / (4 * k * m) as f64 + 1.0).log2();
        let epochs = (raw.floor() as usize).max(1);
        Ok(EpochSchedule {
            k,
            m,
            period,
            delta,
            epochs,
        })
    }

    /// `n_s = 2^s`.
    pub fn reps(&self, s: usize) -> usize {
        1 << s
    }

    /// `T_s = 2 n_s K m L`.
    pub fn epoch_len(&self, s: usize) -> usize {
        2 * self.reps(s) * self.k * self.m * self.period
    }

    /// Confidence radius `C_s`.
    pub fn radius(&self, s: usize) -> f64 {
        let km = (self.k * self.m) as f64;
        let spread = 32.0 * km / (self.reps(s) as f64 * self.period as f64);
        let log_term = (2.0 * km * self.epochs as f64 / self.delta).ln();
        (spread * log_term).sqrt()
    }

    /// `sum_s T_s`.
    pub fn total_len(&self) -> usize {
        (1..=self.epochs).map(|s| self.epoch_len(s)).sum()
    }
}

/// The initial pool with every member's `(action, tally)` visit counts.
///
/// Building the pool is the expensive part of SE-TB, and it depends only on
/// `(K, m, L, spec)`, so one catalog can serve many seeded runs.
#[derive(Debug, Clone)]
pub struct PoolCatalog {
    k: usize,
    m: usize,
    period: usize,
    base_period: usize,
    spec: PoolSpec,
    // counts[i * K * m + pair]
    counts: Vec<u32>,
}

impl PoolCatalog {
    pub fn build(k: usize, m: usize, period: usize, spec: PoolSpec, cap: u64, exec: Execution) -> Result<Self> {
        if m > period {
            return Err(Error::Unsupported(format!(
                "memory m = {m} exceeds period L = {period}"
            )));
        }
        let base_period = match spec {
            PoolSpec::Full => period,
            PoolSpec::PeriodLimited(p) if p >= 1 && p <= period => p,
            PoolSpec::PeriodLimited(p) => {
                return Err(Error::Config(format!("pool period {p} must lie in 1..={period}")));
            }
        };
        let size = bounded_pow(k as u64, base_period, cap).ok_or(Error::Capacity {
            what: "SE-TB policy pool K^p",
            needed: (0..base_period).fold(1u128, |a, _| a.saturating_mul(k as u128)),
            cap: cap as u128,
            hint: "; use a smaller horizon or a period-limited pool",
        })? as usize;
        let pairs = k * m;
        let tables = exec.map_range(size, |i| {
            let policy = Self::policy_for(i, k, base_period, period);
            n_xy(&policy, k, m).expect("m <= period")
        });
        let mut counts = Vec::with_capacity(size * pairs);
        for t in &tables {
            counts.extend((0..pairs).map(|p| t.count_at(p)));
        }
        Ok(PoolCatalog {
            k,
            m,
            period,
            base_period,
            spec,
            counts,
        })
    }

    /// Catalog for horizon `T` with the default policy cap.
    pub fn for_horizon(k: usize, m: usize, horizon: usize, spec: PoolSpec, exec: Execution) -> Result<Self> {
        Self::build(k, m, cycle_length(horizon), spec, DEFAULT_POLICY_CAP, exec)
    }

    fn policy_for(i: usize, k: usize, base_period: usize, period: usize) -> CyclicPolicy {
        let base = CyclicPolicy::from_lex_index(i as u64, k, base_period);
        CyclicPolicy::tiled(&base, period)
    }

    pub fn len(&self) -> usize {
        self.counts.len() / (self.k * self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn spec(&self) -> PoolSpec {
        self.spec
    }

    /// The `i`-th pool member; members are in lexicographic order.
    pub fn policy(&self, i: usize) -> CyclicPolicy {
        Self::policy_for(i, self.k, self.base_period, self.period)
    }

    /// Pool index of `policy`, if it is a member.
    pub fn index_of(&self, policy: &CyclicPolicy) -> Option<usize> {
        if policy.period() != self.period {
            return None;
        }
        let base = &policy.seq()[..self.base_period];
        let idx = base.iter().fold(0usize, |acc, a| acc * self.k + a.index() as usize - 1);
        (idx < self.len() && self.policy(idx) == *policy).then_some(idx)
    }

    /// Visits to pair `pair = (x - 1) * m + (y - 1)` in one period of member `i`.
    #[inline]
    pub fn count(&self, i: usize, pair: usize) -> u32 {
        self.counts[i * self.k * self.m + pair]
    }

    fn counts_of(&self, i: usize) -> &[u32] {
        let w = self.k * self.m;
        &self.counts[i * w..(i + 1) * w]
    }

    /// Exact `mu` of member `i` under a kernel's row-major table.
    fn weighted(&self, i: usize, values: &[f64]) -> f64 {
        let acc: f64 = self
            .counts_of(i)
            .iter()
            .zip(values)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &v)| c as f64 * v)
            .sum();
        acc / self.period as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct SeTbOptions {
    pub exec: Execution,
    /// Keep the surviving pool indices after every epoch.
    pub record_pools: bool,
    /// Pool indices whose estimates are recorded every epoch.
    pub watch: Vec<usize>,
}

/// What happened for one `(x, y)` pair in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRecord {
    pub x: u32,
    pub y: u32,
    /// Pool index of the policy that was executed.
    pub policy: usize,
    /// Its visit count for `(x, y)` per period, i.e. `N_xy * L`.
    pub visits_per_period: u32,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub start: usize,
    pub end: usize,
    pub reps: usize,
    pub radius: f64,
    /// Whether the epoch ran to completion before the horizon ran out.
    pub complete: bool,
    pub pool_before: usize,
    pub pool_after: usize,
    pub best_policy: Option<usize>,
    pub best_estimate: Option<f64>,
    /// `max |estimate - mu|` over the pool, against the true kernel.
    pub max_abs_error: Option<f64>,
    pub pairs: Vec<PairRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survivors: Option<Vec<usize>>,
    /// `(pool index, estimate, true mu)` for watched policies still in the pool.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub watched: Vec<(usize, f64, f64)>,
}

/// Plays `periods` periods of `policy`; optionally accumulates observations of
/// `record`. Returns false if the horizon ran out first.
fn execute(
    env: &mut TallyEnv<'_>,
    policy: &CyclicPolicy,
    periods: usize,
    record: Option<(ActionId, u32)>,
    acc: &mut (f64, usize),
) -> Result<bool> {
    for _ in 0..periods {
        for &a in policy.seq() {
            if env.remaining() == 0 {
                return Ok(false);
            }
            let sample = env.play(a)?;
            if let Some((x, y)) = record {
                if sample.action == x && sample.tally == y {
                    acc.0 += sample.observed;
                    acc.1 += 1;
                }
            }
        }
    }
    Ok(true)
}

/// Runs SE-TB until the environment's horizon is used up.
///
/// After the last epoch the empirically best policy is replayed for the
/// remaining steps. If the schedule is longer than the horizon, the run stops
/// mid-epoch and is flagged.
pub fn se_tb_run(mut env: TallyEnv<'_>, delta: f64, pool: &PoolCatalog, opts: &SeTbOptions) -> Result<RunTrace> {
    let meta = run_epochs(&mut env, delta, pool, opts)?;
    Ok(RunTrace::from_env("se_tb", env, meta))
}

fn run_epochs(env: &mut TallyEnv<'_>, delta: f64, pool: &PoolCatalog, opts: &SeTbOptions) -> Result<RunMeta> {
    let (k, m) = (env.k(), env.m());
    let sched = EpochSchedule::new(k, m, env.horizon(), delta)?;
    if (pool.k, pool.m, pool.period) != (k, m, sched.period) {
        return Err(Error::Config(format!(
            "pool built for (K, m, L) = ({}, {}, {}), run needs ({k}, {m}, {})",
            pool.k, pool.m, pool.period, sched.period
        )));
    }
    let truth: Vec<f64> = {
        let kernel = env.oracle_kernel();
        kernel.actions().flat_map(|x| kernel.row(x).to_vec()).collect()
    };

    let mut meta = RunMeta::default();
    if let PoolSpec::PeriodLimited(p) = pool.spec {
        meta.flags.push(format!("period_limited_pool:{p}"));
    }
    if sched.total_len() > env.horizon() {
        meta.flags.push("schedule_exceeds_horizon".into());
    }

    let pairs = k * m;
    let mut active: Vec<usize> = (0..pool.len()).collect();
    let mut best: Option<usize> = None;

    'epochs: for s in 1..=sched.epochs {
        let reps = sched.reps(s);
        let start = env.elapsed();
        let mut sums = vec![(0.0f64, 0usize); pairs];
        let mut records = Vec::with_capacity(pairs);
        let mut complete = true;

        for (pair, slot) in sums.iter_mut().enumerate() {
            let x = ActionId::new((pair / m) as u32 + 1)?;
            let y = (pair % m) as u32 + 1;
            // Argmax of visits; argmin of the negation keeps the smallest index on ties.
            let (pos, neg) = opts
                .exec
                .argmin_range(active.len(), |j| -(pool.count(active[j], pair) as f64))
                .expect("pool never empties");
            let chosen = active[pos];
            let visits = (-neg) as u32;
            let policy = pool.policy(chosen);
            let mut acc = (0.0, 0usize);
            let finished = if visits == 0 {
                execute(env, &policy, 2 * reps, None, &mut acc)?
            } else {
                execute(env, &policy, reps, None, &mut acc)? && execute(env, &policy, reps, Some((x, y)), &mut acc)?
            };
            records.push(PairRecord {
                x: x.index(),
                y,
                policy: chosen,
                visits_per_period: visits,
                samples: acc.1,
            });
            *slot = acc;
            if !finished {
                complete = false;
                break;
            }
        }

        if !complete {
            meta.flags.push("horizon_truncated_mid_epoch".into());
            meta.phases.push(Phase {
                label: format!("epoch{s}"),
                start,
                end: env.elapsed(),
            });
            meta.epochs.push(EpochRecord {
                epoch: s,
                start,
                end: env.elapsed(),
                reps,
                radius: sched.radius(s),
                complete: false,
                pool_before: active.len(),
                pool_after: active.len(),
                best_policy: None,
                best_estimate: None,
                max_abs_error: None,
                pairs: records,
                survivors: opts.record_pools.then(|| active.clone()),
                watched: Vec::new(),
            });
            break 'epochs;
        }

        let means: Vec<f64> = sums
            .iter()
            .map(|&(sum, n)| if n > 0 { sum / n as f64 } else { 0.0 })
            .collect();
        let estimates = opts.exec.map_slice(&active, |&i| pool.weighted(i, &means));
        let (hat_pos, hat_est) = Execution::Sequential
            .argmin_range(active.len(), |j| estimates[j])
            .expect("pool never empties");
        let hat = active[hat_pos];
        let radius = sched.radius(s);
        let max_abs_error = active
            .iter()
            .zip(&estimates)
            .map(|(&i, &e)| (e - pool.weighted(i, &truth)).abs())
            .fold(0.0, f64::max);
        let watched = opts
            .watch
            .iter()
            .filter_map(|&w| {
                active
                    .iter()
                    .position(|&i| i == w)
                    .map(|j| (w, estimates[j], pool.weighted(w, &truth)))
            })
            .collect();

        let pool_before = active.len();
        let threshold = hat_est + 2.0 * radius;
        active = active
            .iter()
            .zip(&estimates)
            .filter(|(_, &e)| e <= threshold)
            .map(|(&i, _)| i)
            .collect();
        best = Some(hat);

        meta.phases.push(Phase {
            label: format!("epoch{s}"),
            start,
            end: env.elapsed(),
        });
        meta.epochs.push(EpochRecord {
            epoch: s,
            start,
            end: env.elapsed(),
            reps,
            radius,
            complete: true,
            pool_before,
            pool_after: active.len(),
            best_policy: Some(hat),
            best_estimate: Some(hat_est),
            max_abs_error: Some(max_abs_error),
            pairs: records,
            survivors: opts.record_pools.then(|| active.clone()),
            watched,
        });
    }

    if env.remaining() > 0 {
        let hat = best.expect("a complete epoch precedes any leftover steps");
        let policy = pool.policy(hat);
        let start = env.elapsed();
        let mut t = 1;
        while env.remaining() > 0 {
            env.play(policy.action_at(t))?;
            t += 1;
        }
        meta.phases.push(Phase {
            label: "exploit".into(),
            start,
            end: env.elapsed(),
        });
    }
    Ok(meta)
}
