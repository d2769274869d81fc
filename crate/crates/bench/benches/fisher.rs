use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use indirect_core::fisher::{check_identifiability, fisher_bruteforce, fisher_indirect, verify_loewner};
use indirect_core::{SimplexVector, TransitionMatrix};

fn bench_fisher(c: &mut Criterion) {
    let mut group = c.benchmark_group("fisher");
    for k in [3usize, 10, 30] {
        let theta = SimplexVector::uniform(k).unwrap();
        let m = TransitionMatrix::uniform_complementary(k).unwrap();
        group.bench_with_input(BenchmarkId::new("closed_form", k), &k, |b, _| {
            b.iter(|| fisher_indirect(black_box(&theta), &m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("bruteforce", k), &k, |b, _| {
            b.iter(|| fisher_bruteforce(black_box(&theta), &m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("loewner", k), &k, |b, _| {
            b.iter(|| verify_loewner(black_box(&theta), &m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("identifiability", k), &k, |b, _| {
            b.iter(|| check_identifiability(black_box(&m), 1e-9))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fisher);
criterion_main!(benches);
