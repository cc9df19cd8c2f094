use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use defend_core::synth::stage_rng;
use defend_core::training::{train_phase1, GraphContext};
use defend_core::{generate_graph, GeneratorConfig, Tape, Tensor, TrainConfig};
use rand::Rng;

fn uniform(rows: usize, cols: usize, stream: u64) -> Tensor {
    let mut rng = stage_rng(7, stream);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

fn graph(n: usize) -> defend_core::AttributedGraph {
    generate_graph(&GeneratorConfig {
        n_nodes: n,
        ..GeneratorConfig::default()
    })
    .expect("default generator config is valid")
    .0
}

fn kernels(c: &mut Criterion) {
    let g = graph(2000);
    let ctx = GraphContext::new(&g, false).expect("graph is valid");
    let adj: Arc<_> = Arc::clone(&ctx.adj);
    let h = uniform(2000, 64, 1);
    c.bench_function("spmm_2000x64", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let x = tape.constant(h.clone());
            x.spmm_by(&adj)
                .expect("shapes agree")
                .sum()
                .expect("non-empty")
                .item()
                .expect("scalar")
        })
    });
    let z = uniform(2000, 65, 2);
    c.bench_function("gram_2000x65", |b| {
        b.iter(|| {
            let tape = Tape::new();
            tape.constant(z.clone())
                .gram()
                .sum()
                .expect("non-empty")
                .item()
                .expect("scalar")
        })
    });
}

fn epoch(c: &mut Criterion) {
    let g = graph(1000);
    let mut group = c.benchmark_group("phase1");
    group.sample_size(10);
    for structure in [false, true] {
        let ctx = GraphContext::new(&g, structure).expect("graph is valid");
        let cfg = TrainConfig {
            phase1_max_epochs: 2,
            patience: 1,
            structure_reconstruction: structure,
            ..TrainConfig::default()
        };
        let name = if structure {
            "two_epochs_with_structure"
        } else {
            "two_epochs_attributes_only"
        };
        group.bench_function(name, |b| {
            b.iter(|| train_phase1(&ctx, &cfg).expect("training runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, epoch);
criterion_main!(benches);
