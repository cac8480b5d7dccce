use criterion::{criterion_group, criterion_main, Criterion};
use mpc_bench::scenarios;

fn whole_scenarios(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario");
    group.sample_size(20);
    for s in scenarios() {
        let built = s.build().expect("scenario builds");
        group.bench_function(s.label(), |b| b.iter(|| built.run().expect("scenario runs")));
    }
    group.finish();
}

criterion_group!(benches, whole_scenarios);
criterion_main!(benches);
