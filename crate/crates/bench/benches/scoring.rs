use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cotloop_bench::{exam, run_for};
use cotloop_core::eval::{score, Grouping, Score};

fn bench(c: &mut Criterion) {
    let ds = exam(6_000);
    let run = run_for(&ds);
    let mut g = c.benchmark_group("scoring");
    g.bench_function("score_of", |b| b.iter(|| Score::of(black_box(4_019), black_box(6_099))));
    g.bench_function("report_sitting", |b| b.iter(|| score(black_box(&run), &ds, Grouping::Sitting).unwrap()));
    g.bench_function("report_sitting_unit", |b| b.iter(|| score(black_box(&run), &ds, Grouping::SittingUnit).unwrap()));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
