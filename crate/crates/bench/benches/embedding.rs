use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use splitting::flow::{flow, FlowConfig};
use splitting_bench::{embedding, perturbed_euler};

fn bench(c: &mut Criterion) {
    let (x, _) = perturbed_euler();
    let cfg = FlowConfig::default();
    c.bench_function("flow_unit_time", |b| {
        b.iter(|| flow(&x, black_box(&[0.1, 0.2, -0.1]), 1.0, &cfg, false).unwrap())
    });
    c.bench_function("flow_unit_time_with_jacobian", |b| {
        b.iter(|| flow(&x, black_box(&[0.1, 0.2, -0.1]), 1.0, &cfg, true).unwrap())
    });
    let emb = embedding();
    let w = [0.1, 0.2, -0.1];
    c.bench_function("psi", |b| b.iter(|| emb.psi(black_box(&w)).unwrap()));
    c.bench_function("psi_jacobian", |b| b.iter(|| emb.psi_jacobian(black_box(&w)).unwrap()));
    let m = emb.psi(&w).unwrap();
    c.bench_function("psi_inverse_newton", |b| b.iter(|| emb.psi_inverse(black_box(&m)).unwrap()));
    c.bench_function("psi_inverse_flow", |b| b.iter(|| emb.psi_inverse_flow(black_box(&m)).unwrap()));
}

criterion_group!(benches, bench);
criterion_main!(benches);
