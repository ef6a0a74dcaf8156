use criterion::{criterion_group, criterion_main, Criterion};
use splitting::scenario::{builtin, run};

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    for name in ["twisted-graph", "tangent-algebroid", "euler-blowup"] {
        let mut s = builtin(name).unwrap();
        s.sampling.count = 10;
        g.bench_function(name, |b| b.iter(|| run(&s).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
