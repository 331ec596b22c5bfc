use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lakejoin_bench::{synthetic, unit_rows};
use lakejoin_core::model::Encoder;
use lakejoin_core::pipeline;
use lakejoin_core::search::{greedy_select, top_b, CandidateGraph};

fn bench_top_b(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_b");
    for n in [10_000, 20_000, 40_000] {
        let emb = unit_rows(1, n, 64);
        let table_of: Vec<usize> = (0..n).map(|i| i / 5).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| top_b(black_box(0), &emb, &table_of, 50))
        });
    }
    group.finish();
}

fn bench_greedy(c: &mut Criterion) {
    let mut group = c.benchmark_group("greedy_select");
    for b in [20, 50, 100] {
        let emb = unit_rows(2, 5_000, 64);
        let table_of: Vec<usize> = (0..5_000).collect();
        let pool = top_b(0, &emb, &table_of, b);
        let ids: Vec<usize> = pool.iter().map(|&(c, _)| c).collect();
        let g = CandidateGraph::build(0, &ids, &emb);
        group.bench_with_input(BenchmarkId::from_parameter(b), &b, |bench, _| {
            bench.iter(|| greedy_select(black_box(&g), 15, 1.0).expect("complete graph"))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("model_forward");
    group.sample_size(20);
    for clusters in [4, 8] {
        let (lake, prepared, cfg) = synthetic(clusters, 64);
        let params = pipeline::init_model(&lake, &prepared, &cfg);
        group.bench_with_input(BenchmarkId::from_parameter(lake.columns.len()), &clusters, |b, _| {
            b.iter(|| pipeline::embed(&params, &prepared, Encoder::Hin).expect("forward runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_top_b, bench_greedy, bench_forward);
criterion_main!(benches);
