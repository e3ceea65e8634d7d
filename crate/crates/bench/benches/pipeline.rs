use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pcsr::losses::im_loss;
use pcsr::pseudolabel::{kmeans, polycentric_pseudolabels, PolycentricConfig, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use pcsr::{adapt, AdaptConfig, Rng};
use pcsr_bench::{benchmark_target, gaussian, snapshot};

fn bench_kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    for m in [100, 500] {
        let points = gaussian(&mut Rng::new(1), m, 32);
        group.bench_with_input(BenchmarkId::from_parameter(m), &points, |b, pts| {
            b.iter(|| kmeans(black_box(pts), 3, &mut Rng::new(0), DEFAULT_MAX_ITERS, DEFAULT_TOL))
        });
    }
    group.finish();
}

fn bench_pseudolabels(c: &mut Criterion) {
    let (features, probs) = snapshot(3000, 32, 6, 2);
    let mut group = c.benchmark_group("pseudolabels");
    for p in [1, 3] {
        let cfg = PolycentricConfig {
            centers_per_class: p,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::new("P", p), &cfg, |b, cfg| {
            b.iter(|| polycentric_pseudolabels(black_box(&features), black_box(&probs), cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_model(c: &mut Criterion) {
    let (model, target) = benchmark_target(0);
    let batch = target.x().select_rows(&(0..64).collect::<Vec<_>>());
    c.bench_function("forward_backward_64", |b| {
        b.iter(|| {
            let fwd = model.forward(black_box(&batch)).unwrap();
            let loss = im_loss(&fwd.logits).unwrap();
            model.backward_from(&fwd, &loss.grad_logits).unwrap()
        })
    });
}

fn bench_adapt_epoch(c: &mut Criterion) {
    let (model, target) = benchmark_target(0);
    let cfg = AdaptConfig {
        epochs: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("adapt");
    group.sample_size(10);
    group.bench_function("one_epoch_3000", |b| {
        b.iter(|| adapt(&model, black_box(&target), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_kmeans,
    bench_pseudolabels,
    bench_model,
    bench_adapt_epoch
);
criterion_main!(benches);
