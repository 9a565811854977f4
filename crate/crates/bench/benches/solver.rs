use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use heavytail_core::instanton::{solve_finite_horizon, SolverOptions};
use heavytail_core::oracle::shooting_instanton;
use heavytail_core::ModelParams;

fn instanton(c: &mut Criterion) {
    let m = ModelParams::new(1.0, 4.0).unwrap();
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("instanton");
    g.sample_size(10);
    for horizon in [5.0, 10.0] {
        let n = (horizon / 0.005) as usize;
        g.bench_with_input(BenchmarkId::new("solve", horizon), &n, |b, &n| {
            b.iter(|| black_box(solve_finite_horizon(&m, horizon, n, 0.0, 1.0, &opts).unwrap().action))
        });
    }
    g.bench_function("shooting_h20", |b| {
        b.iter(|| black_box(shooting_instanton(1.0, 4.0, 20.0, 40_000).unwrap().action))
    });
    g.finish();
}

criterion_group!(benches, instanton);
criterion_main!(benches);
