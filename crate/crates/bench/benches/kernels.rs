use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use heavytail_core::excursion::ExcursionTracker;
use heavytail_core::mc::{importance_tail, sample_time_averages, simulation_grid};
use heavytail_core::ou::{sample_path, simulate_time_average};
use heavytail_core::rng::NoiseStream;
use heavytail_core::ModelParams;

fn model() -> ModelParams {
    ModelParams::new(1.0, 4.0).unwrap()
}

fn normals(c: &mut Criterion) {
    let mut g = c.benchmark_group("rng");
    g.throughput(Throughput::Elements(10_000));
    g.bench_function("normals_10k", |b| {
        b.iter(|| {
            let mut s = NoiseStream::new(1, 0);
            let mut acc = 0.0;
            for _ in 0..10_000 {
                acc += s.next_normal();
            }
            black_box(acc)
        })
    });
    g.finish();
}

fn time_average(c: &mut Criterion) {
    let m = model();
    let mut g = c.benchmark_group("time_average");
    for horizon in [10.0, 100.0] {
        let grid = simulation_grid(horizon, 0.01).unwrap();
        g.throughput(Throughput::Elements(grid.n_steps as u64));
        g.bench_with_input(BenchmarkId::from_parameter(horizon), &grid, |b, grid| {
            let mut rep = 0;
            b.iter(|| {
                rep += 1;
                black_box(simulate_time_average(&m, grid, 0.0, 1.0, 3, rep))
            })
        });
    }
    g.finish();
}

fn tracker(c: &mut Criterion) {
    let m = model();
    let grid = simulation_grid(100.0, 0.01).unwrap();
    let path = sample_path(&m, &grid, 0.0, 5, 0).unwrap();
    let mut g = c.benchmark_group("excursions");
    g.throughput(Throughput::Elements(grid.n_steps as u64));
    g.bench_function("tracker_t100", |b| {
        b.iter(|| {
            let mut t = ExcursionTracker::new(0.1, 4.0, 0.0, grid.dt, 0.0).unwrap();
            for &x in &path.values[1..] {
                t.push(x);
            }
            black_box(t.n_cycles())
        })
    });
    g.finish();
}

fn estimators(c: &mut Criterion) {
    let m = model();
    let mut g = c.benchmark_group("estimators");
    g.sample_size(10);
    g.bench_function("naive_1k_paths_t50", |b| {
        b.iter(|| black_box(sample_time_averages(&m, 50.0, 0.01, 1000, 9).unwrap()))
    });
    let grid = simulation_grid(50.0, 0.01).unwrap();
    let controls = vec![vec![0.0; grid.n_steps], vec![0.01; grid.n_steps]];
    g.bench_function("mixture_is_1k_paths_t50", |b| {
        b.iter(|| black_box(importance_tail(&m, 0.5, 50.0, 1000, 9, 0.01, &controls).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, normals, time_average, tracker, estimators);
criterion_main!(benches);
