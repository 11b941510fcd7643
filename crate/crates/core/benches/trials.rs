use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oa_core::blackbox::{OptimizerKind, Shape};
use oa_core::harness::{gen_synthetic_db, run_kn_oa_on, Attack, Execution, ExperimentConfig, SyntheticParams};

fn trials(c: &mut Criterion) {
    let ds = gen_synthetic_db(&SyntheticParams {
        classes: 5,
        per_class: 40,
        embed_dim: 16,
        query_shape: Shape::new(3, 16, 16),
        ..SyntheticParams::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("run_kn_oa");
    group.sample_size(10);
    for (name, attack) in [("whitebox", Attack::Whitebox), ("nes", Attack::Blackbox(OptimizerKind::Nes))] {
        for execution in [Execution::Sequential, Execution::Parallel] {
            let cfg = ExperimentConfig {
                trials: 16,
                attack,
                query_budget: 200,
                execution,
                ..ExperimentConfig::default()
            };
            let id = BenchmarkId::new(name, format!("{execution:?}").to_lowercase());
            group.bench_with_input(id, &cfg, |b, cfg| b.iter(|| run_kn_oa_on(&ds, cfg).unwrap()));
        }
    }
    group.finish();
}

criterion_group!(benches, trials);
criterion_main!(benches);
