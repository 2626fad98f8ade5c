use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridreconf_bench::log_grid;
use gridreconf_core::feeders;
use gridreconf_core::pipeline::{exhaustive_oracle, lambda_sweep, solve_dsr};
use gridreconf_core::{build_p2, LambdaSpec, ObjectiveSpec, SolverConfig};

fn solve_baran(c: &mut Criterion) {
    let model = feeders::baran33();
    let config = SolverConfig::default();
    c.bench_function("baran33_solve_lambda200", |b| {
        b.iter(|| {
            let problem = build_p2(&model, &ObjectiveSpec::loss(), &LambdaSpec::uniform(200.0)).unwrap();
            black_box(solve_dsr(&problem, &config).unwrap().refit_loss_w)
        })
    });
}

fn oracle_ieee37(c: &mut Criterion) {
    let model = feeders::ieee37_test2();
    let config = SolverConfig::default();
    let mut group = c.benchmark_group("ieee37");
    group.sample_size(10);
    group.bench_function("test2_radial_oracle", |b| {
        b.iter(|| black_box(exhaustive_oracle(&model, &ObjectiveSpec::loss(), true, &config).unwrap().best_loss_w))
    });
    let grid = log_grid(1.0, 1e4, 20);
    group.bench_function("test1_sweep_20", |b| {
        let model = feeders::ieee37_test1();
        b.iter(|| {
            black_box(
                lambda_sweep(&model, &ObjectiveSpec::loss(), &LambdaSpec::default(), &grid, &config)
                    .unwrap()
                    .points
                    .len(),
            )
        })
    });
    group.finish();
}

criterion_group!(benches, solve_baran, oracle_ieee37);
criterion_main!(benches);
