//! Sequential vs rayon paths for the hot kernels.
//!
//! `matmul` takes the rayon path when the `parallel` feature is on and the
//! product is large enough; `matmul_seq` always stays on the calling thread.
//! Build with `--no-default-features` to time the whole library sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gar::gar::{compute_n, gar_batch_objective, gar_grad, GarConfig};
use gar::network::{mlp4, Network};
use gar::training::predict_classes;
use gar::{Matrix, Rng};

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn matmul(c: &mut Criterion) {
    let mut rng = Rng::new(1, 0);
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(128, 784, 1200), (1000, 1200, 1200), (250, 10, 10)] {
        let a = random(m, k, &mut rng);
        let b = random(k, n, &mut rng);
        let id = format!("{m}x{k}x{n}");
        group.bench_with_input(BenchmarkId::new("seq", &id), &(), |bench, _| {
            bench.iter(|| black_box(a.matmul_seq(&b)))
        });
        group.bench_with_input(BenchmarkId::new("par", &id), &(), |bench, _| {
            bench.iter(|| black_box(a.matmul(&b)))
        });
    }
    group.finish();
}

fn regularizer(c: &mut Criterion) {
    let mut rng = Rng::new(2, 0);
    let cfg = GarConfig::default();
    let mut group = c.benchmark_group("gar");
    for &m in &[250usize, 2000] {
        let b = Matrix::from_fn(m, 10, |_, _| rng.normal().max(0.0));
        group.bench_with_input(BenchmarkId::new("compute_n", m), &b, |bench, b| {
            bench.iter(|| black_box(compute_n(b)))
        });
        group.bench_with_input(BenchmarkId::new("gar_grad", m), &b, |bench, b| {
            bench.iter(|| black_box(gar_grad(b, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut rng = Rng::new(3, 0);
    let net = Network::new(784, &mlp4(10), &mut rng).unwrap();
    let batch = random(16 + 234, 784, &mut rng);
    let eval = random(2048, 784, &mut rng);
    let cfg = GarConfig::default();
    let mut group = c.benchmark_group("mlp4");
    group.sample_size(10);
    group.bench_function("gar_batch_objective/250", |bench| {
        bench.iter(|| black_box(gar_batch_objective(&net, &batch, &cfg).unwrap()))
    });
    group.bench_function("predict/2048", |bench| {
        bench.iter(|| black_box(predict_classes(&net, &eval).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, matmul, regularizer, network);
criterion_main!(benches);
