use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use hashcbr_core::index::{hamming_distance, linear_scan, retrieve};
use hashcbr_core::seed;
use hashcbr_core::synth::{clustered, ClusteredSpec};
use hashcbr_core::{HashCode, HashIndex, LshPlanes, RetrieveOptions};

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    group.sample_size(20);
    for n in [10_000usize, 50_000] {
        let ds = clustered(&ClusteredSpec { n: n + 100, ..Default::default() }, 3);
        let (base, queries) = ds.cases.split_at(n);
        let planes = LshPlanes::new(ds.dim, 24, 11).unwrap();
        let index = HashIndex::build(base, &planes).unwrap();
        let opts = RetrieveOptions::default();
        group.bench_with_input(BenchmarkId::new("hashed", n), &n, |b, _| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % queries.len();
                retrieve(&index, &queries[i].features, &planes, &opts).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("linear_scan", n), &n, |b, _| {
            let mut i = 0;
            b.iter(|| {
                i = (i + 1) % queries.len();
                linear_scan(&index, &queries[i].features, opts.top_n).unwrap()
            })
        });
    }
    group.finish();
}

fn hamming(c: &mut Criterion) {
    let mut rng = seed::rng(5);
    let codes: Vec<HashCode> = (0..1024)
        .map(|_| HashCode::from_real(&(0..36).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()))
        .collect();
    c.bench_function("hamming_36bit_1024", |b| {
        b.iter(|| {
            codes
                .windows(2)
                .map(|w| hamming_distance(&w[0], &w[1]).unwrap())
                .sum::<u32>()
        })
    });
}

criterion_group!(benches, retrieval, hamming);
criterion_main!(benches);
