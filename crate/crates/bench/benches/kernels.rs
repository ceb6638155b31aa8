use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use wz_bench::fixture;
use wz_core::estimators::exact_linear_variance;
use wz_core::flows::{ito_flow_fine, wz_flow};
use wz_core::{builtin_models, lognorm, make_mesh, ou_driver, sample_brownian, Mat};

fn paths(c: &mut Criterion) {
    let mesh = make_mesh(10.0, 0.1, 64).unwrap();
    let mut id = 0u64;
    c.bench_function("sample_brownian T=10 eps=0.1 m=64", |b| {
        b.iter(|| {
            id += 1;
            sample_brownian(black_box(&mesh), 1, 7, id)
        })
    });
    let bp = sample_brownian(&mesh, 1, 7, 0);
    c.bench_function("ou_driver T=10 eps=0.1 m=64", |b| b.iter(|| ou_driver(black_box(&bp), &mesh, 0.1).unwrap()));
}

fn flows(c: &mut Criterion) {
    let model = builtin_models().build("bounded_sigma1d", &[]).unwrap();
    let (bp, driver) = fixture(10.0, 0.1, 64);
    c.bench_function("wz_flow bounded_sigma1d 6400 steps", |b| {
        b.iter(|| wz_flow(model.as_ref(), black_box(&driver), &[1.0], 1).unwrap())
    });
    c.bench_function("ito_flow_fine bounded_sigma1d 6400 steps", |b| {
        b.iter(|| ito_flow_fine(model.as_ref(), black_box(&bp), &[1.0]).unwrap())
    });
}

fn algebra(c: &mut Criterion) {
    let a = Mat::from_rows(&[&[-1.0, 2.0, 0.5], &[0.0, -3.0, 1.0], &[0.3, 0.1, -2.0]]);
    c.bench_function("lognorm 3x3", |b| b.iter(|| lognorm(black_box(&a)).unwrap()));
    c.bench_function("exact_linear_variance n=1..500", |b| {
        b.iter_batched(
            || (),
            |_| (1..=500).map(|n| exact_linear_variance(-1.0, 0.1, n).unwrap()).sum::<f64>(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, paths, flows, algebra);
criterion_main!(benches);
