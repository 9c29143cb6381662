//! Self-check suite behind `tallyband verify`.
//!
//! Every check runs to completion and reports what it measured; failures are
//! report content, never errors.

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{AlgorithmEntry, ExperimentConfig, SeedSpec};
use super::run::{compute_cpr, run_experiment};
use crate::algorithms::{alg_det_run, best_constant_run, AlgorithmKind, PoolSpec};
use crate::env::{ActionId, FeedbackModel, KernelJson, TallyEnv, TallyKernel, TallyWindow};
use crate::error::Result;
use crate::exec::Execution;
use crate::instances::{gen_alternating, gen_random, InstanceSpec};
use crate::planning::{
    best_cyclic, cycle_length, dp_optimal, exhaustive_oracle, n_xy, n_xy_after, CyclicPolicy, DpPlan, PlanOptions,
    DEFAULT_ORACLE_BUDGET, DEFAULT_POLICY_CAP,
};
use crate::rng::RandomStream;

/// Planner under test: `(kernel, horizon) -> plan from the empty window`.
pub type Planner = fn(&TallyKernel, usize) -> Result<DpPlan>;

fn default_planner(kernel: &TallyKernel, horizon: usize) -> Result<DpPlan> {
    dp_optimal(kernel, horizon, &TallyWindow::empty(kernel.m()), PlanOptions::default())
}

/// Inputs the suite treats as known-good. Tests swap them for broken ones to
/// make sure the corresponding check notices.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub kernel_fixtures: Vec<KernelJson>,
    pub planner: Planner,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        let mut rng = RandomStream::new(11, 0);
        let random = gen_random(3, 2, &mut rng).expect("valid shape").kernel;
        VerifyOptions {
            kernel_fixtures: vec![
                KernelJson {
                    k: 2,
                    m: 2,
                    h: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
                },
                KernelJson {
                    k: 3,
                    m: 1,
                    h: vec![vec![0.25], vec![0.5], vec![1.0]],
                },
                serde_json::from_str(&random.to_json()).expect("round trip"),
            ],
            planner: default_planner,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, Value)>) -> CheckResult {
    match body() {
        Ok((passed, measured)) => CheckResult {
            name,
            passed,
            measured,
            detail: None,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            measured: Value::Null,
            detail: Some(e.to_string()),
        },
    }
}

pub fn verify() -> VerifyReport {
    verify_with(&VerifyOptions::default())
}

pub fn verify_with(opts: &VerifyOptions) -> VerifyReport {
    let checks = vec![
        check("kernel_validation", || kernel_validation(&opts.kernel_fixtures)),
        check("oracle_equivalence", || oracle_equivalence(opts.planner)),
        check("dp_tie_break", || dp_tie_break(opts.planner)),
        check("alg_det_bound", alg_det_bound),
        check("cyclic_approximation", cyclic_approximation),
        check("nxy_well_defined", nxy_well_defined),
        check("constant_separation", constant_separation),
        check("reproducibility", reproducibility),
    ];
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn kernel_validation(fixtures: &[KernelJson]) -> Result<(bool, Value)> {
    let mut rejected_fixtures = Vec::new();
    for (i, f) in fixtures.iter().enumerate() {
        let text = serde_json::to_string(f)?;
        if let Err(e) = TallyKernel::from_json(&text) {
            rejected_fixtures.push(json!({"fixture": i, "error": e.to_string()}));
        }
    }
    // Malformed kernels that must be refused.
    let bad = [
        r#"{"K":2,"m":1,"h":[[1.5],[0.0]]}"#,
        r#"{"K":2,"m":1,"h":[[-0.1],[0.0]]}"#,
        r#"{"K":2,"m":2,"h":[[0.0],[0.0,1.0]]}"#,
        r#"{"K":1,"m":1,"h":[[0.0]]}"#,
        r#"{"K":2,"m":1,"h":[[0.0],[0.0]],"extra":1}"#,
    ];
    let accepted_bad: Vec<&str> = bad
        .iter()
        .copied()
        .filter(|t| TallyKernel::from_json(t).is_ok())
        .collect();
    let passed = rejected_fixtures.is_empty() && accepted_bad.is_empty();
    Ok((
        passed,
        json!({"fixtures": fixtures.len(), "rejected_fixtures": rejected_fixtures, "accepted_bad": accepted_bad}),
    ))
}

fn oracle_equivalence(planner: Planner) -> Result<(bool, Value)> {
    let mut worst = 0.0f64;
    let mut mismatched = Vec::new();
    for i in 0..20u64 {
        let m = 1 + (i % 3) as usize;
        let kernel = gen_random(2, m, &mut RandomStream::new(i, 1))?.kernel;
        let dp = planner(&kernel, 10)?;
        let oracle = exhaustive_oracle(&kernel, 10, DEFAULT_ORACLE_BUDGET)?;
        worst = worst.max((dp.value - oracle.value).abs());
        // Random kernels can have optima equal up to rounding, so the
        // sequence is checked by replaying it rather than by identity.
        let replayed = kernel.replay_loss(&TallyWindow::empty(m), &dp.actions);
        if dp.actions.len() != 10 || (replayed - oracle.value).abs() > 1e-9 {
            mismatched.push(i);
        }
    }
    Ok((
        worst <= 1e-9 && mismatched.is_empty(),
        json!({"instances": 20, "max_abs_gap": worst, "sequence_mismatches": mismatched}),
    ))
}

/// Kernels with many optimal sequences, where only the tie-break decides the
/// reported plan. The exhaustive oracle returns the lexicographically first
/// minimizer, which is the contract for the DP as well.
fn dp_tie_break(planner: Planner) -> Result<(bool, Value)> {
    let kernels = [
        TallyKernel::from_fn(3, 2, |_, _| 0.0)?,
        gen_alternating().kernel,
        TallyKernel::from_fn(3, 3, |x, y| if y == 1 || x == 3 { 0.5 } else { 1.0 })?,
    ];
    let mut failures = Vec::new();
    for (i, kernel) in kernels.iter().enumerate() {
        let plan = planner(kernel, 7)?;
        let oracle = exhaustive_oracle(kernel, 7, DEFAULT_ORACLE_BUDGET)?;
        let serial = dp_optimal(
            kernel,
            7,
            &TallyWindow::empty(kernel.m()),
            PlanOptions {
                exec: Execution::Sequential,
                ..PlanOptions::default()
            },
        )?;
        if plan.actions != oracle.actions || serial.actions != oracle.actions {
            let show = |p: &DpPlan| p.actions.iter().map(|a| a.index()).collect::<Vec<_>>();
            failures.push(json!({"kernel": i, "planner": show(&plan), "expected": show(&oracle)}));
        }
    }
    Ok((
        failures.is_empty(),
        json!({"kernels": kernels.len(), "failures": failures}),
    ))
}

fn alg_det_bound() -> Result<(bool, Value)> {
    let mut worst_slack = f64::INFINITY;
    for i in 0..12u64 {
        let k = 2 + (i % 3) as usize;
        let m = 1 + (i % 4) as usize;
        let kernel = gen_random(k, m, &mut RandomStream::new(i, 2))?.kernel;
        let env = TallyEnv::new(&kernel, FeedbackModel::Deterministic, 200, RandomStream::new(i, 3));
        let trace = alg_det_run(env, PlanOptions::default())?;
        let cpr = compute_cpr(&trace, &kernel, 200, PlanOptions::default())?;
        worst_slack = worst_slack.min(((m + 1) * k) as f64 - cpr);
    }
    Ok((worst_slack >= -1e-9, json!({"instances": 12, "min_slack": worst_slack})))
}

fn cyclic_approximation() -> Result<(bool, Value)> {
    let horizon = 64;
    let bound = 3.0 * (horizon as f64).sqrt();
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..10u64 {
        let kernel = gen_random(2, 2, &mut RandomStream::new(i, 4))?.kernel;
        let (_, mu_star) = best_cyclic(&kernel, cycle_length(horizon), DEFAULT_POLICY_CAP, Execution::default())?;
        let opt = default_planner(&kernel, horizon)?.value;
        worst_gap = worst_gap.max(horizon as f64 * mu_star - opt);
    }
    Ok((
        worst_gap <= bound + 1e-9,
        json!({"instances": 10, "max_gap": worst_gap, "bound": bound}),
    ))
}

fn nxy_well_defined() -> Result<(bool, Value)> {
    let mut rng = RandomStream::new(5, 5);
    let mut violations = 0usize;
    for _ in 0..40 {
        let k = rng.int_inclusive(2, 3) as usize;
        let period = rng.int_inclusive(1, 8) as usize;
        let m = rng.int_inclusive(1, period as u64) as usize;
        let seq: Vec<u32> = (0..period).map(|_| rng.int_inclusive(1, k as u64) as u32).collect();
        let policy = CyclicPolicy::from_indices(&seq)?;
        let reference = n_xy(&policy, k, m)?;
        let prefix_len = rng.int_inclusive(0, 3 * period as u64) as usize;
        let prefix: Vec<ActionId> = (0..prefix_len)
            .map(|_| ActionId::new_unchecked(rng.int_inclusive(1, k as u64) as u32))
            .collect();
        for warmup in 1..=3 {
            let t = n_xy_after(&policy, k, m, &prefix, warmup)?;
            if t != reference || t.total_count() != period as u64 {
                violations += 1;
            }
        }
    }
    Ok((violations == 0, json!({"cases": 40, "violations": violations})))
}

fn constant_separation() -> Result<(bool, Value)> {
    let alt = gen_alternating();
    let mut measured = Vec::new();
    let mut passed = true;
    for horizon in [64, 256] {
        let env = TallyEnv::new(&alt.kernel, FeedbackModel::Bernoulli, horizon, RandomStream::new(0, 0));
        let trace = best_constant_run(env)?;
        let cpr = compute_cpr(&trace, &alt.kernel, horizon, PlanOptions::default())?;
        let opt = default_planner(&alt.kernel, horizon)?.value;
        passed &= cpr == (horizon - 1) as f64 && opt == 0.0;
        measured.push(json!({"T": horizon, "cpr": cpr, "optimal_value": opt}));
    }
    Ok((passed, Value::Array(measured)))
}

fn reproducibility() -> Result<(bool, Value)> {
    let config = ExperimentConfig::new(
        vec![InstanceSpec::alternating()],
        vec![
            AlgorithmEntry::new(AlgorithmKind::SeTb {
                delta: 0.1,
                pool: PoolSpec::Full,
            }),
            AlgorithmEntry::new(AlgorithmKind::AlgStoch { delta: 0.1, r: None }),
        ],
        vec![64],
        SeedSpec::count(9, 2),
    );
    let a = run_experiment(&config, Execution::Parallel)?;
    let b = run_experiment(&config, Execution::Parallel)?;
    let c = run_experiment(&config, Execution::Sequential)?;
    let same = a.summary_csv()? == b.summary_csv()?
        && a.step_files == b.step_files
        && a.summary_csv()? == c.summary_csv()?
        && a.step_files == c.step_files;
    let accounting = a.rows.iter().all(|r| r.cpr >= -1e-9);
    Ok((
        same && accounting && a.failures.is_empty(),
        json!({"cells": a.rows.len(), "identical": same}),
    ))
}
