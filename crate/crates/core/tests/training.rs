use std::collections::HashSet;

use dhgnn_core::checkpoint::Checkpoint;
use dhgnn_core::graph::{DirectedGraph, MaskKind};
use dhgnn_core::model::{GateMode, GraphOps};
use dhgnn_core::tensor::Matrix;
use dhgnn_core::train::{
    accuracy, evaluate_accuracy, link_scores, make_link_split, random_instance, rng_for, synth_directed_homophily,
    train_link, train_node_split, AdamW, LinkNegatives, Network, SynthParams, Task, TrainConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn small_synth(seed: u64) -> dhgnn_core::LabeledDataset {
    let mut p = SynthParams::new(120, 3, 0.8, 0.3, 6, 0.6);
    p.num_splits = 2;
    synth_directed_homophily(&p, &mut rng_for(seed, 0)).unwrap().dataset
}

fn quick_config() -> TrainConfig {
    let mut cfg = TrainConfig::synthetic_default();
    cfg.hidden = 16;
    cfg.epochs = 40;
    cfg.patience = 10;
    cfg
}

#[test]
fn early_stopping_returns_the_best_validation_parameters() {
    let ds = small_synth(1);
    let cfg = quick_config();
    let (net, outcome) = train_node_split(&ds, 0, &cfg).unwrap();
    let recorded = outcome.history.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
    let ops = GraphOps::new(&ds.graph);
    let val = evaluate_accuracy(&net, &ops, &ds, &ds.splits[0], MaskKind::Val).unwrap();
    assert_eq!(val, recorded);
    assert_eq!(outcome.history[outcome.best_epoch].val_acc, recorded);
    assert!(outcome.epochs_run <= cfg.epochs);
    assert!(outcome.epochs_run - 1 - outcome.best_epoch <= cfg.patience);
}

#[test]
fn evaluation_is_deterministic_and_checkpoints_reproduce_it() {
    let ds = small_synth(2);
    let (net, _) = train_node_split(&ds, 1, &quick_config()).unwrap();
    let ops = GraphOps::new(&ds.graph);
    let a = evaluate_accuracy(&net, &ops, &ds, &ds.splits[1], MaskKind::Test).unwrap();
    let b = evaluate_accuracy(&net, &ops, &ds, &ds.splits[1], MaskKind::Test).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());

    let bytes = Checkpoint::from_network(&net).to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap().to_network().unwrap();
    let c = evaluate_accuracy(&back, &ops, &ds, &ds.splits[1], MaskKind::Test).unwrap();
    assert_eq!(a.to_bits(), c.to_bits());
}

#[test]
fn accuracy_examples() {
    let labels: Vec<usize> = (0..50).map(|v| v % 5).collect();
    let mut perfect = Matrix::zeros(50, 5);
    for (v, &y) in labels.iter().enumerate() {
        perfect[(v, y)] = 1.0;
    }
    let all: Vec<usize> = (0..50).collect();
    assert_eq!(accuracy(&perfect, &labels, &all), 1.0);

    // A random predictor on 5 balanced classes lands near 1/5.
    let n = 20_000;
    let labels: Vec<usize> = (0..n).map(|v| v % 5).collect();
    let logits = Matrix::uniform(n, 5, 1.0, &mut rng_for(3, 0));
    let acc = accuracy(&logits, &labels, &(0..n).collect::<Vec<_>>());
    let sd = (0.2f64 * 0.8 / n as f64).sqrt();
    assert!((acc - 0.2).abs() < 4.0 * sd, "{acc}");
}

#[test]
fn separable_synthetic_features_identify_the_class() {
    let p = SynthParams::new(90, 3, 1.0, 1.0, 4, 0.0);
    let ds = synth_directed_homophily(&p, &mut rng_for(0, 0)).unwrap().dataset;
    let all: Vec<usize> = (0..90).collect();
    assert_eq!(accuracy(&ds.features, &ds.labels, &all), 1.0);
    for (u, v) in ds.graph.edges() {
        assert_eq!(ds.labels[u], ds.labels[v]);
    }
}

#[test]
fn loss_history_is_finite_under_a_deep_preset() {
    let mut p = SynthParams::new(200, 3, 0.7, 0.3, 6, 0.5);
    p.num_splits = 1;
    let ds = synth_directed_homophily(&p, &mut rng_for(4, 0)).unwrap().dataset;
    let mut cfg = TrainConfig::preset("chameleon").unwrap();
    cfg.epochs = 60;
    cfg.patience = 60;
    let (_, outcome) = train_node_split(&ds, 0, &cfg).unwrap();
    assert_eq!(outcome.history.len(), 60);
    assert!(outcome.history.iter().all(|r| r.loss.total.is_finite()));
}

#[test]
fn full_branch_weight_leaves_fusion_untouched() {
    // With l2 = 1 the fused head gets no gradient; encoders still learn via branch heads.
    let ds = small_synth(5);
    let mut cfg = quick_config();
    cfg.branch_coef = 1.0;
    cfg.weight_decay = 0.0;
    let (net, outcome) = train_node_split(&ds, 0, &cfg).unwrap();
    assert!(outcome.history.iter().all(|r| r.loss.total == (r.loss.branch_fwd + r.loss.branch_bwd) / 2.0));
    let fresh = Network::for_task(&cfg, ds.num_nodes(), ds.num_features(), 3, &mut rng_for(cfg.seed, 0)).unwrap();
    for name in ["fusion.out.w", "fusion.forward.w1"] {
        let id = net.params.find(name).unwrap();
        assert_eq!(net.params.get(id), fresh.params.get(id));
    }
}

#[test]
fn gate_disabled_network_has_no_gate_parameters() {
    let mut cfg = quick_config();
    cfg.gate_mode = GateMode::Disabled;
    let net = Network::for_task(&cfg, 10, 3, 3, &mut rng_for(0, 0)).unwrap();
    assert!(net.params.find("forward.gate0.w").is_none());
    let ds = small_synth(6);
    let (_, outcome) = train_node_split(&ds, 0, &cfg).unwrap();
    assert!(outcome.test_acc.is_finite());
}

#[test]
fn link_training_keeps_held_out_edges_out_of_message_passing() {
    let mut p = SynthParams::new(150, 3, 0.9, 0.1, 6, 0.3);
    p.num_splits = 1;
    let ds = synth_directed_homophily(&p, &mut rng_for(7, 0)).unwrap().dataset;
    let mut cfg = quick_config();
    cfg.task = Task::LinkPrediction;
    let report = train_link(&ds, &cfg).unwrap();
    let split = report.split.as_ref().unwrap();
    for &(u, v) in split.val_pos.iter().chain(&split.test_pos) {
        assert!(!split.graph().has_edge(u, v));
    }
    let net = report.network.as_ref().unwrap();
    let all: Vec<(usize, usize)> = (0..150).flat_map(|u| (0..150).map(move |v| (u, v))).collect();
    let scores = link_scores(net, &GraphOps::new(split.graph()), &ds.features, &all).unwrap();
    assert!(scores.iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s)));
}

#[test]
fn untrained_scores_average_one_half() {
    let mut rng = rng_for(8, 0);
    let (g, x, _) = random_instance(40, &mut rng).unwrap();
    let mut cfg = quick_config();
    cfg.task = Task::LinkPrediction;
    let ops = GraphOps::new(&g);
    let pairs: Vec<(usize, usize)> = (0..400).map(|_| (rng.random_range(0..40), rng.random_range(0..40))).collect();
    let mut mean = 0.0;
    let draws = 20;
    for _ in 0..draws {
        let net = Network::for_task(&cfg, 40, 3, 3, &mut rng).unwrap();
        let s = link_scores(&net, &ops, &x, &pairs).unwrap();
        mean += s.iter().sum::<f64>() / s.len() as f64 / draws as f64;
    }
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}

#[test]
fn dense_graph_cannot_be_split_for_links() {
    let edges: Vec<_> = (0..4).flat_map(|u| (0..4).filter(move |&v| v != u).map(move |v| (u, v))).collect();
    let g = DirectedGraph::new(4, &edges).unwrap();
    assert!(make_link_split(&g, [0.8, 0.1, 0.1], LinkNegatives::Uniform, &mut rng_for(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_learning_rate_is_bit_exact_identity(seed in 0u64..1000) {
        let net = Network::for_task(&quick_config(), 6, 3, 3, &mut rng_for(seed, 0)).unwrap();
        let mut params = net.params.clone();
        let mut rng = rng_for(seed, 1);
        let grads: Vec<Matrix> = params.values().iter().map(|m| Matrix::uniform(m.rows(), m.cols(), 5.0, &mut rng)).collect();
        let mut opt = AdamW::new(&params, 1.0, 0.1);
        opt.lr = 0.0;
        opt.step(&mut params, &grads);
        prop_assert_eq!(params, net.params);
    }

    #[test]
    fn decay_with_zero_gradient_is_exact(seed in 0u64..1000, lr in 1e-4f64..0.1, wd in 0.0f64..0.5) {
        let net = Network::for_task(&quick_config(), 6, 3, 3, &mut rng_for(seed, 0)).unwrap();
        let mut params = net.params.clone();
        let zeros: Vec<Matrix> = params.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        let mut opt = AdamW::new(&params, lr, wd);
        opt.step(&mut params, &zeros);
        for (a, b) in params.values().iter().zip(net.params.values()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert_eq!(*x, y * (1.0 - lr * wd));
            }
        }
    }

    #[test]
    fn link_negatives_are_non_edges(seed in 0u64..500, reversed in any::<bool>()) {
        let mut rng = rng_for(seed, 0);
        let (g, _, _) = random_instance(15, &mut rng).unwrap();
        let mode = if reversed { LinkNegatives::Reversed } else { LinkNegatives::Uniform };
        let s = make_link_split(&g, [0.8, 0.1, 0.1], mode, &mut rng).unwrap();
        let mut seen = HashSet::new();
        for &(u, v) in s.train_neg.iter().chain(&s.val_neg).chain(&s.test_neg) {
            prop_assert!(u != v && !g.has_edge(u, v));
            prop_assert!(seen.insert((u, v)));
        }
        prop_assert_eq!(s.train_pos.len() + s.val_pos.len() + s.test_pos.len(), g.num_edges());
        for &(u, v) in s.val_pos.iter().chain(&s.test_pos) {
            prop_assert!(!s.graph().has_edge(u, v));
        }
    }
}
