//! Sequential (one worker) against parallel execution over a mock backend
//! with a fixed per-call latency.

#[path = "../tests/common/mod.rs"]
mod common;

use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use taxoseek::baselines::build_embedding_index;
use taxoseek::builder::{build, BuildConfig};
use taxoseek::eval::{evaluate, EvalOptions, TopKRetriever};
use taxoseek::gateway::mock::{ScriptedChat, ScriptedEmbedder};
use taxoseek::gateway::Gateway;
use taxoseek::search::{SearchConfig, Searcher};

use common::{gateway_config, World};

const LATENCY: Duration = Duration::from_micros(300);
const WORKERS: [usize; 2] = [1, 8];

fn slow_chat(world: &Arc<World>) -> Arc<ScriptedChat> {
    let w = Arc::clone(world);
    Arc::new(ScriptedChat::new().oracle(move |label, req| w.answer(label, req)).latency(LATENCY))
}

fn bench_build(c: &mut Criterion) {
    let world = Arc::new(World::new(4, 4, 200));
    let reg = world.registry();
    let mut group = c.benchmark_group("build");
    group.sample_size(10);
    for workers in WORKERS {
        let cfg = BuildConfig {
            workers,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(workers), &cfg, |b, cfg| {
            b.iter(|| {
                let g = Gateway::new(slow_chat(&world), gateway_config());
                black_box(build(&reg, &g, cfg).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_eval(c: &mut Criterion) {
    let world = Arc::new(World::new(4, 4, 200).with_queries(50, 2, 1));
    let (t, reg) = (world.taxonomy(), world.registry());
    let g = Gateway::new(slow_chat(&world), gateway_config());
    let mut group = c.benchmark_group("eval");
    group.sample_size(10);
    for workers in WORKERS {
        let searcher = Searcher::new(
            &t,
            &reg,
            &g,
            SearchConfig {
                workers,
                ..Default::default()
            },
        )
        .unwrap();
        let opts = EvalOptions {
            workers,
            keep_traces: false,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(workers), &opts, |b, opts| {
            b.iter(|| black_box(evaluate(&searcher, &world.queries, opts).unwrap()))
        });
    }
    group.finish();
}

fn bench_topk(c: &mut Criterion) {
    let world = World::new(8, 8, 2000).with_queries(200, 2, 3);
    let reg = world.registry();
    let g = Gateway::new(Arc::new(ScriptedChat::new()), gateway_config())
        .with_embedder(Arc::new(ScriptedEmbedder::new("bench", 64)));
    let index = build_embedding_index(&g, &reg).unwrap();
    let retriever = TopKRetriever {
        gateway: &g,
        index: &index,
        k: 10,
    };
    // Embed the queries once so the loop measures ranking only.
    evaluate(&retriever, &world.queries, &EvalOptions::default()).unwrap();
    let mut group = c.benchmark_group("topk");
    for workers in WORKERS {
        let opts = EvalOptions {
            workers,
            keep_traces: false,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(workers), &opts, |b, opts| {
            b.iter(|| black_box(evaluate(&retriever, &world.queries, opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_build, bench_eval, bench_topk);
criterion_main!(benches);
