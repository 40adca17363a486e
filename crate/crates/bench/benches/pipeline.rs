use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use odecausal::ode::{expm, uniform_grid};
use odecausal::structure::extract_linear;
use odecausal::train::{rollout, Trainer};
use odecausal::var::{fit_var, VarConfig};
use odecausal::{solve_ivp, NeuralField, SolverConfig, TrainConfig};
use odecausal_bench::{first_order, linear_architecture, linear_trajectory, test_matrix};
use rand::SeedableRng;

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    let times = uniform_grid(0.0, 10.0, 200);
    for dim in [3, 10, 50] {
        let field = first_order(dim);
        let x0 = vec![1.0; dim];
        group.bench_with_input(BenchmarkId::new("rk4", dim), &dim, |b, _| {
            b.iter(|| solve_ivp(&field, black_box(&x0), &times, &SolverConfig::rk4(0.0125)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dopri5", dim), &dim, |b, _| {
            b.iter(|| solve_ivp(&field, black_box(&x0), &times, &SolverConfig::generation()).unwrap())
        });
        let a = test_matrix(dim);
        group.bench_with_input(BenchmarkId::new("expm", dim), &dim, |b, _| b.iter(|| expm(black_box(&a))));
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for dim in [3, 10] {
        let data = linear_trajectory(dim);
        let arch = linear_architecture(dim);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&data, &arch, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("epoch", dim), &dim, |b, _| b.iter(|| trainer.epoch().unwrap()));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let field = NeuralField::new(&arch, &mut rng).unwrap();
        let mut u0 = data.row(0).to_vec();
        u0.extend(vec![0.0; dim]);
        group.bench_with_input(BenchmarkId::new("rollout", dim), &dim, |b, _| {
            b.iter(|| rollout(&field, black_box(&u0), data.times(), 0.0125).unwrap())
        });
        let plan = rollout(&field, &u0, data.times(), 0.0125).unwrap();
        let cot = vec![1.0; plan.outputs().len()];
        group.bench_with_input(BenchmarkId::new("backprop", dim), &dim, |b, _| {
            b.iter(|| plan.backprop(&field, black_box(&cot)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("extract_linear", dim), &dim, |b, _| {
            b.iter(|| extract_linear(black_box(&field), 0.05).unwrap())
        });
    }
    group.finish();
}

fn baseline(c: &mut Criterion) {
    let data = linear_trajectory(10);
    let cfg = VarConfig { epochs: 200, ..VarConfig::default() };
    c.bench_function("var_fit_10x200", |b| b.iter(|| fit_var(black_box(&data), &cfg).unwrap()));
}

criterion_group!(benches, solvers, training, baseline);
criterion_main!(benches);
