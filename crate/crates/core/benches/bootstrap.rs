use criterion::{criterion_group, criterion_main, Criterion};
use fmanova::bench::{bench_bootstrap, BenchSpec};

fn bootstrap(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for b in [50, 100] {
        let spec = BenchSpec::model1_tukey(b);
        group.bench_function(format!("{}-B{b}", spec.name), |bench| {
            bench.iter(|| bench_bootstrap(&spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bootstrap);
criterion_main!(benches);
