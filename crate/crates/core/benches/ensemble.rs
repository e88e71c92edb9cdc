use std::hint::black_box;

use bbm_core::engine::EngineConfig;
use bbm_core::harness::{run_ensemble, Execution, RunManifest, StatisticSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn manifest(t: f64, reps: u64) -> RunManifest {
    let stat = StatisticSpec::additive(t);
    RunManifest::new(EngineConfig::new(stat.proxy_time), stat, 1, reps)
}

fn ensembles(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for (t, reps) in [(2.0, 256u64), (5.0, 64)] {
        let m = manifest(t, reps);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel { workers: 0 })] {
            group.bench_with_input(BenchmarkId::new(name, format!("t{t}-x{reps}")), &m, |b, m| {
                b.iter(|| black_box(run_ensemble(m, exec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensembles);
criterion_main!(benches);
