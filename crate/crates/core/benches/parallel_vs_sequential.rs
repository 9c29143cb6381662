use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tallyband::algorithms::{AlgorithmKind, PoolCatalog, PoolSpec};
use tallyband::harness::{run_experiment, AlgorithmEntry, ExperimentConfig, SeedSpec};
use tallyband::instances::{gen_random, InstanceSpec};
use tallyband::planning::{best_cyclic, dp_optimal, PlanOptions, DEFAULT_POLICY_CAP};
use tallyband::{Execution, RandomStream, TallyWindow};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_best_cyclic(c: &mut Criterion) {
    let kernel = gen_random(2, 3, &mut RandomStream::new(1, 0)).unwrap().kernel;
    let mut g = c.benchmark_group("best_cyclic_K2_L14");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| best_cyclic(black_box(&kernel), 14, DEFAULT_POLICY_CAP, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_pool(c: &mut Criterion) {
    let mut g = c.benchmark_group("pool_catalog_K2_m2_L14");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| PoolCatalog::build(2, 2, 14, PoolSpec::Full, DEFAULT_POLICY_CAP, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_dp(c: &mut Criterion) {
    let kernel = gen_random(4, 5, &mut RandomStream::new(2, 0)).unwrap().kernel;
    let start = TallyWindow::empty(5);
    let mut g = c.benchmark_group("dp_optimal_K4_m5_T400");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = PlanOptions {
            exec,
            ..PlanOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| dp_optimal(black_box(&kernel), 400, &start, opts).unwrap())
        });
    }
    g.finish();
}

fn bench_cells(c: &mut Criterion) {
    let random: InstanceSpec = serde_json::from_str(r#"{"family": "random", "K": 2, "m": 3, "seed": 9}"#).unwrap();
    let config = ExperimentConfig::new(
        vec![InstanceSpec::alternating(), random],
        vec![
            AlgorithmEntry::new(AlgorithmKind::SeTb {
                delta: 0.1,
                pool: PoolSpec::Full,
            }),
            AlgorithmEntry::new(AlgorithmKind::AlgStoch { delta: 0.1, r: None }),
        ],
        vec![144, 256],
        SeedSpec::count(0, 8),
    );
    let mut g = c.benchmark_group("experiment_64_cells");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_experiment(&config, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_best_cyclic, bench_pool, bench_dp, bench_cells);
criterion_main!(benches);
