use defend_core::training::{train_phase1, train_phase2, GraphContext};
use defend_core::{generate_graph, GeneratorConfig, TrainConfig, Variant};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn small_graph(seed: u64) -> defend_core::AttributedGraph {
    let cfg = GeneratorConfig {
        seed,
        n_nodes: 300,
        clique_size: 6,
        bias_strength: 2.0,
        ..GeneratorConfig::default()
    };
    generate_graph(&cfg).unwrap().0
}

fn small_train(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        phase1_max_epochs: 40,
        patience: 10,
        phase2_epochs: 40,
        ..TrainConfig::default()
    };
    cfg.model.hidden = 16;
    cfg.model.latent = 16;
    cfg
}

#[test]
fn phase1_loss_decreases_on_small_graphs() {
    for seed in 0..10 {
        let g = small_graph(seed);
        let ctx = GraphContext::new(&g, true).unwrap();
        let p1 = train_phase1(&ctx, &small_train(seed)).unwrap();
        let first = p1.history.first().unwrap().total;
        let last = p1.history.last().unwrap().total;
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert!(p1.best_loss <= first);
    }
}

#[test]
fn correlation_constraint_lowers_score_sensitive_correlation() {
    let mut first = Vec::new();
    let mut last = Vec::new();
    for seed in 0..10 {
        let g = small_graph(seed);
        let ctx = GraphContext::new(&g, true).unwrap();
        let cfg = small_train(seed);
        let p1 = train_phase1(&ctx, &cfg).unwrap();
        let p2 = train_phase2(&ctx, &p1.params, &cfg).unwrap();
        first.push(p2.score_sensitive_corr[0]);
        last.push(*p2.score_sensitive_corr.last().unwrap());
    }
    let (a, b) = (median(first), median(last));
    assert!(b < a, "median |pearson(o, s)| {a} -> {b}");
}

#[test]
fn variants_share_the_same_phase1_when_signatures_match() {
    let base = small_train(3);
    let full = base.phase1_signature();
    let nocorr = TrainConfig {
        variant: Variant::NoCorr,
        ..base.clone()
    }
    .phase1_signature();
    let vanilla = TrainConfig {
        variant: Variant::VanillaVgae,
        ..base.clone()
    }
    .phase1_signature();
    let other_beta = {
        let mut c = base.clone();
        c.weights.beta = 123.0;
        c.phase1_signature()
    };
    assert_eq!(full, nocorr);
    assert_eq!(full, other_beta);
    assert_ne!(full, vanilla);
}
