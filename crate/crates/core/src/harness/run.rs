//! Running experiment grids and writing their CSV outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{AlgorithmEntry, ExperimentConfig};
use crate::algorithms::{
    alg_det_run, alg_stoch_run, best_constant_run, se_tb_run, AlgStochOptions, AlgorithmKind, PoolCatalog, PoolSpec,
    RunTrace, SeTbOptions,
};
use crate::env::{TallyEnv, TallyKernel, TallyWindow};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::instances::Instance;
use crate::planning::{cycle_length, dp_optimal, PlanOptions};
use crate::rng::RandomStream;

/// Complete policy regret of a trace: its expected cumulative loss minus the
/// exact optimum over all length-`T` action sequences.
pub fn compute_cpr(trace: &RunTrace, kernel: &TallyKernel, horizon: usize, plan: PlanOptions) -> Result<f64> {
    if trace.len() != horizon {
        return Err(Error::Protocol(format!(
            "trace has {} steps, horizon is {horizon}",
            trace.len()
        )));
    }
    let optimal = dp_optimal(kernel, horizon, &TallyWindow::empty(kernel.m()), plan)?.value;
    Ok(trace.total_expected() - optimal)
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub instance_id: String,
    pub family: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub algorithm: String,
    pub seed: u64,
    pub cpr: f64,
    pub optimal_value: f64,
    pub wall_ms: u64,
    /// Semicolon-separated.
    pub deviation_flags: String,
}

#[derive(Debug, Clone, Serialize)]
struct StepRow<'a> {
    run_id: &'a str,
    t: usize,
    action: u32,
    tally: u32,
    observed_loss: f64,
    expected_loss: f64,
    cum_expected_loss: f64,
}

/// A cell that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub run_id: String,
    pub instance_id: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub algorithm: String,
    pub seed: u64,
    pub capacity: bool,
    pub reason: String,
}

/// Everything an experiment produces, held in memory until written.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<FailedCell>,
    /// `(run_id, step CSV bytes)` in cell order.
    pub step_files: Vec<(String, Vec<u8>)>,
    /// Generated instances, one entry per (instance, horizon) group.
    pub instances_json: String,
}

impl ExperimentOutput {
    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        summary_csv(&self.rows)
    }

    pub fn has_capacity_failure(&self) -> bool {
        self.failures.iter().any(|f| f.capacity)
    }

    /// Writes `summary.csv`, `failures.csv`, `instances.json` and
    /// `runs/<run_id>.csv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let runs = dir.join("runs");
        std::fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
        write_file(&dir.join("summary.csv"), &self.summary_csv()?)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for f in &self.failures {
            w.serialize(f)?;
        }
        if self.failures.is_empty() {
            w.write_record(["run_id", "instance_id", "T", "algorithm", "seed", "capacity", "reason"])?;
        }
        write_file(&dir.join("failures.csv"), &into_bytes(w)?)?;
        write_file(&dir.join("instances.json"), self.instances_json.as_bytes())?;
        for (run_id, bytes) in &self.step_files {
            write_file(&runs.join(format!("{run_id}.csv")), bytes)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "instance_id",
            "family",
            "K",
            "m",
            "T",
            "algorithm",
            "seed",
            "cpr",
            "optimal_value",
            "wall_ms",
            "deviation_flags",
        ])?;
    }
    into_bytes(w)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    Ok(r.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

/// Step-level CSV for one run.
pub fn steps_csv(run_id: &str, trace: &RunTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut cum = 0.0;
    for (i, s) in trace.steps.iter().enumerate() {
        cum += s.expected;
        w.serialize(StepRow {
            run_id,
            t: i + 1,
            action: s.action.index(),
            tally: s.tally,
            observed_loss: s.observed,
            expected_loss: s.expected,
            cum_expected_loss: cum,
        })?;
    }
    into_bytes(w)
}

/// Runs one algorithm on one kernel. `pool` is required for SE-TB.
pub fn run_algorithm(
    kind: &AlgorithmKind,
    env: TallyEnv<'_>,
    pool: Option<&PoolCatalog>,
    plan: PlanOptions,
) -> Result<RunTrace> {
    match kind {
        AlgorithmKind::SeTb { delta, .. } => {
            let pool = pool.ok_or_else(|| Error::Config("se_tb needs a policy pool".into()))?;
            // Cells already run in parallel; keep each run single-threaded.
            let opts = SeTbOptions {
                exec: Execution::Sequential,
                ..SeTbOptions::default()
            };
            se_tb_run(env, *delta, pool, &opts)
        }
        AlgorithmKind::AlgDet => alg_det_run(env, plan),
        AlgorithmKind::AlgStoch { delta, r } => alg_stoch_run(env, *delta, AlgStochOptions { plan, repetitions: *r }),
        AlgorithmKind::BestConstant => best_constant_run(env),
    }
}

struct Group {
    instance_id: String,
    instance: Result<Instance>,
    horizon: usize,
    optimal: Result<f64>,
}

struct Cell<'a> {
    group: usize,
    alg: &'a AlgorithmEntry,
    kind: AlgorithmKind,
    seed: u64,
}

type PoolKey = (usize, usize, usize, PoolSpec);

fn error_text(e: &Error) -> (bool, String) {
    (e.is_capacity(), e.to_string())
}

#[derive(Serialize)]
struct InstanceRecord<'a> {
    instance_id: &'a str,
    #[serde(rename = "T")]
    horizon: usize,
    family: &'a str,
    kernel: &'a TallyKernel,
    meta: &'a crate::instances::InstanceMeta,
}

/// Runs every (instance, horizon, algorithm, seed) cell.
///
/// Cells run concurrently; each owns a random stream keyed by
/// `(master seed, seed)`, so paired seeds see identical noise across
/// algorithms and results do not depend on scheduling. Failed cells are
/// collected, not fatal.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    config.validate()?;
    let seeds = config.seeds.seeds()?;
    let master = config.seeds.master;
    let ids = config.instance_ids();
    let plan_serial = PlanOptions {
        state_cap: config.caps.state_cap,
        exec: Execution::Sequential,
    };

    let mut group_keys = Vec::new();
    for (ii, spec) in config.instances.iter().enumerate() {
        for &t in &config.horizons {
            group_keys.push((ii, spec, t));
        }
    }
    // Instance generation and the exact optimum, once per (instance, T).
    let groups: Vec<Group> = exec.map_slice(&group_keys, |&(ii, spec, t)| {
        let instance = spec.generate(master, ii, t);
        let optimal = match &instance {
            Ok(inst) => dp_optimal(&inst.kernel, t, &TallyWindow::empty(inst.kernel.m()), plan_serial).map(|p| p.value),
            Err(e) => Err(Error::Config(format!("instance generation failed: {e}"))),
        };
        Group {
            instance_id: ids[ii].clone(),
            instance,
            horizon: t,
            optimal,
        }
    });

    let mut cells = Vec::new();
    for (gi, _) in groups.iter().enumerate() {
        for alg in &config.algorithms {
            let kind = alg.kind()?;
            for &seed in &seeds {
                cells.push(Cell {
                    group: gi,
                    alg,
                    kind: kind.clone(),
                    seed,
                });
            }
        }
    }

    // One pool per (K, m, L, spec), shared by every seed.
    let mut pool_keys: Vec<PoolKey> = Vec::new();
    for c in &cells {
        if let (AlgorithmKind::SeTb { pool, .. }, Ok(inst)) = (&c.kind, &groups[c.group].instance) {
            let key = (
                inst.kernel.k(),
                inst.kernel.m(),
                cycle_length(groups[c.group].horizon),
                *pool,
            );
            if !pool_keys.contains(&key) {
                pool_keys.push(key);
            }
        }
    }
    let pools: BTreeMap<String, Result<PoolCatalog>> = pool_keys
        .iter()
        .map(|&(k, m, l, spec)| {
            let built = if m > l {
                Err(Error::Unsupported(format!(
                    "memory m = {m} exceeds floor(sqrt(T)) = {l}"
                )))
            } else {
                PoolCatalog::build(k, m, l, spec, config.caps.policy_cap, exec)
            };
            (format!("{k}/{m}/{l}/{spec:?}"), built)
        })
        .collect();

    let results = exec.map_slice(&cells, |cell| {
        let g = &groups[cell.group];
        let label = cell.alg.label();
        let run_id = format!("{}__{}__T{}__s{}", g.instance_id, label, g.horizon, cell.seed);
        let fail = |e: &Error| {
            let (capacity, reason) = error_text(e);
            Err(FailedCell {
                run_id: run_id.clone(),
                instance_id: g.instance_id.clone(),
                horizon: g.horizon,
                algorithm: label.clone(),
                seed: cell.seed,
                capacity,
                reason,
            })
        };
        let inst = match &g.instance {
            Ok(i) => i,
            Err(e) => return fail(e),
        };
        let optimal = match &g.optimal {
            Ok(v) => *v,
            Err(e) => return fail(e),
        };
        let pool = match &cell.kind {
            AlgorithmKind::SeTb { pool, .. } => {
                let key = format!(
                    "{}/{}/{}/{pool:?}",
                    inst.kernel.k(),
                    inst.kernel.m(),
                    cycle_length(g.horizon)
                );
                match &pools[&key] {
                    Ok(p) => Some(p),
                    Err(e) => return fail(e),
                }
            }
            _ => None,
        };
        let started = Instant::now();
        let env = TallyEnv::new(
            &inst.kernel,
            config.feedback_for(cell.alg),
            g.horizon,
            RandomStream::new(master, cell.seed),
        );
        let trace = match run_algorithm(&cell.kind, env, pool, plan_serial) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let wall_ms = if config.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        if trace.len() != g.horizon {
            return fail(&Error::Protocol(format!(
                "trace has {} steps, horizon is {}",
                trace.len(),
                g.horizon
            )));
        }
        let mut flags = inst.meta.flags.clone();
        flags.extend(trace.meta.flags.iter().cloned());
        let row = SummaryRow {
            instance_id: g.instance_id.clone(),
            family: inst.family.as_str().to_string(),
            k: inst.kernel.k(),
            m: inst.kernel.m(),
            horizon: g.horizon,
            algorithm: label.clone(),
            seed: cell.seed,
            cpr: trace.total_expected() - optimal,
            optimal_value: optimal,
            wall_ms,
            deviation_flags: flags.join(";"),
        };
        match steps_csv(&run_id, &trace) {
            Ok(bytes) => Ok((row, run_id.clone(), bytes)),
            Err(e) => fail(&e),
        }
    });

    let mut out = ExperimentOutput {
        rows: Vec::new(),
        failures: Vec::new(),
        step_files: Vec::new(),
        instances_json: String::new(),
    };
    for r in results {
        match r {
            Ok((row, run_id, bytes)) => {
                out.rows.push(row);
                out.step_files.push((run_id, bytes));
            }
            Err(f) => out.failures.push(f),
        }
    }
    let records: Vec<InstanceRecord> = groups
        .iter()
        .filter_map(|g| {
            g.instance.as_ref().ok().map(|inst| InstanceRecord {
                instance_id: &g.instance_id,
                horizon: g.horizon,
                family: inst.family.as_str(),
                kernel: &inst.kernel,
                meta: &inst.meta,
            })
        })
        .collect();
    out.instances_json = serde_json::to_string_pretty(&records)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{alg_det_run, best_constant_run};
    use crate::env::FeedbackModel;
    use crate::harness::config::{AlgorithmEntry, SeedSpec};
    use crate::instances::{gen_alternating, gen_needle, InstanceSpec};

    #[test]
    fn cpr_examples() {
        let inst = gen_needle(3, 4, &mut RandomStream::new(5, 0)).unwrap();
        let env = TallyEnv::new(&inst.kernel, FeedbackModel::Deterministic, 100, RandomStream::new(0, 0));
        let trace = alg_det_run(env, PlanOptions::default()).unwrap();
        assert!(compute_cpr(&trace, &inst.kernel, 100, PlanOptions::default()).unwrap() <= 15.0);

        let alt = gen_alternating();
        let env = TallyEnv::new(&alt.kernel, FeedbackModel::Bernoulli, 64, RandomStream::new(0, 0));
        let trace = best_constant_run(env).unwrap();
        assert_eq!(
            compute_cpr(&trace, &alt.kernel, 64, PlanOptions::default()).unwrap(),
            63.0
        );
        assert!(matches!(
            compute_cpr(&trace, &alt.kernel, 65, PlanOptions::default()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn replayed_optimum_has_zero_cpr() {
        let inst = crate::instances::gen_random(3, 2, &mut RandomStream::new(8, 0)).unwrap();
        let plan = dp_optimal(&inst.kernel, 40, &TallyWindow::empty(2), PlanOptions::default()).unwrap();
        let mut env = TallyEnv::new(&inst.kernel, FeedbackModel::Bernoulli, 40, RandomStream::new(0, 0));
        for &a in &plan.actions {
            env.play(a).unwrap();
        }
        let trace = RunTrace::from_env("replay", env, Default::default());
        assert!(
            compute_cpr(&trace, &inst.kernel, 40, PlanOptions::default())
                .unwrap()
                .abs()
                < 1e-9
        );
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::new(
            vec![InstanceSpec::alternating()],
            vec![
                AlgorithmEntry::new(AlgorithmKind::SeTb {
                    delta: 0.1,
                    pool: PoolSpec::Full,
                }),
                AlgorithmEntry::new(AlgorithmKind::BestConstant),
            ],
            vec![64],
            SeedSpec::count(3, 3),
        )
    }

    #[test]
    fn cell_count_and_order() {
        let out = run_experiment(&small_config(), Execution::Parallel).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert!(out.failures.is_empty());
        let order: Vec<(String, u64)> = out.rows.iter().map(|r| (r.algorithm.clone(), r.seed)).collect();
        assert_eq!(order[0], ("se_tb".to_string(), 0));
        assert_eq!(order[5], ("best_constant".to_string(), 2));
        assert!(out.rows.iter().all(|r| r.cpr >= -1e-9));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = run_experiment(&small_config(), Execution::Parallel).unwrap();
        let b = run_experiment(&small_config(), Execution::Sequential).unwrap();
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
        assert_eq!(a.step_files, b.step_files);
    }

    #[test]
    fn capacity_failures_are_recorded() {
        let mut cfg = small_config();
        cfg.caps.policy_cap = 16;
        let out = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.failures.len(), 3);
        assert!(out.has_capacity_failure());
    }

    #[test]
    fn misuse_is_a_failed_cell() {
        let mut cfg = small_config();
        cfg.algorithms = vec![AlgorithmEntry {
            feedback: Some(FeedbackModel::Bernoulli),
            ..AlgorithmEntry::new(AlgorithmKind::AlgDet)
        }];
        let out = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_eq!(out.failures.len(), 3);
        assert!(!out.has_capacity_failure());
        assert!(out.failures[0].reason.contains("deterministic"));
    }

    #[test]
    fn step_csv_header_and_accounting() {
        let alt = gen_alternating();
        let env = TallyEnv::new(&alt.kernel, FeedbackModel::Bernoulli, 5, RandomStream::new(0, 0));
        let trace = best_constant_run(env).unwrap();
        let text = String::from_utf8(steps_csv("r", &trace).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "run_id,t,action,tally,observed_loss,expected_loss,cum_expected_loss"
        );
        assert_eq!(lines.last().unwrap(), "r,5,1,2,1.0,1.0,4.0");
        assert!((trace.cum_expected - trace.total_expected()).abs() < 1e-9);
    }

    #[test]
    fn summary_round_trip() {
        let out = run_experiment(&small_config(), Execution::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_to(dir.path()).unwrap();
        let back = read_summary(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(back, out.rows);
        let header = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(
            header.starts_with("instance_id,family,K,m,T,algorithm,seed,cpr,optimal_value,wall_ms,deviation_flags\n")
        );
        assert!(dir.path().join("runs/alternating0__se_tb__T64__s0.csv").exists());
    }
}
