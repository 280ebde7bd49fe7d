use dhgnn_core::graph::{DirectedGraph, Direction};
use dhgnn_core::model::{AdjRows, Dhgnn, FusionMode, GateMode, GraphOps, ModelConfig, ParamSet, PassMode};
use dhgnn_core::tensor::{Matrix, SparseRows, Tape};
use dhgnn_core::train::{random_instance, Network, Task};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(n: usize, d: usize) -> ModelConfig {
    ModelConfig {
        num_nodes: n,
        in_features: d,
        out_dim: 3,
        hidden: 8,
        layers: 3,
        chunk_size: 2,
        gate_mlp_layers: 2,
        adj_mlp_layers: 2,
        adj_coef: 0.5,
        input_dropout: 0.0,
        dropout: 0.0,
        noise: false,
        gate_mode: GateMode::Resettable,
        fusion_mode: FusionMode::Gated,
        adj_rows: AdjRows::OwnDirection,
    }
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn mean_aggregation_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (g, _, _) = random_instance(20, &mut rng).unwrap();
    let h = Matrix::uniform(20, 5, 2.0, &mut rng);
    for dir in Direction::BOTH {
        let mut dense = Matrix::zeros(20, 20);
        for (u, v) in g.edges() {
            match dir {
                Direction::Forward => dense[(u, v)] = 1.0,
                Direction::Backward => dense[(v, u)] = 1.0,
            }
        }
        for r in 0..20 {
            let deg: f64 = dense.row(r).iter().sum();
            if deg > 0.0 {
                dense.row_mut(r).iter_mut().for_each(|x| *x /= deg);
            }
        }
        let got = SparseRows::mean_aggregator(&g, dir).apply(&h);
        assert!(close(&got, &dense.matmul(&h), 1e-12));
    }
}

#[test]
fn cumax_closed_forms() {
    let mut t = Tape::new();
    let x = t.constant(Matrix::from_rows(&[&[0.0, 0.0, 0.0]]));
    let y = t.cumax(x);
    let v = t.value(y).as_slice();
    assert_eq!(v[0], 1.0);
    assert!((v[1] - 2.0 / 3.0).abs() < 1e-15 && (v[2] - 1.0 / 3.0).abs() < 1e-15);

    let x = t.constant(Matrix::from_rows(&[&[2f64.ln(), 0.0]]));
    let y = t.cumax(x);
    assert_eq!(t.value(y).as_slice()[0], 1.0);
    assert!((t.value(y).as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn reset_extremes_select_an_endpoint() {
    let mut t = Tape::new();
    let prev = t.constant(Matrix::from_rows(&[&[0.2, 0.9]]));
    let ghat = t.constant(Matrix::from_rows(&[&[1.0, 0.4]]));
    let zero = t.constant(Matrix::zeros(1, 2));
    let one = t.constant(Matrix::filled(1, 2, 1.0));
    let keep = t.lerp(prev, ghat, zero).unwrap();
    let take = t.lerp(prev, ghat, one).unwrap();
    assert_eq!(t.value(keep).as_slice(), &[0.2, 0.9]);
    assert_eq!(t.value(take).as_slice(), &[1.0, 0.4]);
}

#[test]
fn ntb_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::new();
    let h = t.constant(Matrix::uniform(4, 3, 1.0, &mut rng));
    let w1 = t.constant(Matrix::uniform(3, 1, 1.0, &mut rng));
    let w2 = t.constant(Matrix::uniform(3, 1, 1.0, &mut rng));
    let clean = Dhgnn::ntb(&mut t, h, w1, w2, None).unwrap();
    let hw1 = t.value(h).matmul(t.value(w1));
    assert_eq!(t.value(clean), &hw1);

    let zero = t.constant(Matrix::zeros(3, 1));
    let s = Dhgnn::ntb(&mut t, h, zero, w2, None).unwrap();
    assert!(t.value(s).as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn ntb_noise_has_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 100_000;
    let row = Matrix::from_rows(&[&[0.3, -0.7]]);
    let w1 = Matrix::from_rows(&[&[0.5], &[0.25]]);
    let w2 = Matrix::from_rows(&[&[-0.4], &[0.9]]);
    let mut t = Tape::new();
    let h = t.constant(Matrix::from_vec(draws, 2, row.as_slice().repeat(draws)));
    let (w1v, w2v) = (t.constant(w1.clone()), t.constant(w2.clone()));
    let eps: Vec<f64> = (0..draws).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let s = Dhgnn::ntb(&mut t, h, w1v, w2v, Some(&Matrix::from_vec(draws, 1, eps))).unwrap();
    let mean = t.value(s).mean();
    let clean = row.matmul(&w1).item();
    let z = row.matmul(&w2).item();
    let spread = z.max(0.0) + (-z.abs()).exp().ln_1p();
    assert!((mean - clean).abs() < 3.0 * spread / (draws as f64).sqrt());
}

fn fuse_eval(model: &Dhgnn, params: &ParamSet, g: &DirectedGraph, x: &Matrix) -> (Matrix, Matrix) {
    let ops = GraphOps::new(g);
    let mut t = Tape::new();
    let p = params.bind_frozen(&mut t);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xv = t.constant(x.clone());
    let f = model.encode(&mut t, &p, &ops, xv, Direction::Forward, PassMode::EVAL, &mut rng).unwrap();
    let b = model.encode(&mut t, &p, &ops, xv, Direction::Backward, PassMode::EVAL, &mut rng).unwrap();
    let out = model
        .fuse(&mut t, &p, &ops, [f.embeddings, b.embeddings], PassMode::EVAL, &mut rng)
        .unwrap();
    (t.value(out.fused).clone(), t.value(out.q.unwrap()).clone())
}

#[test]
fn equal_scores_split_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (g, x, _) = random_instance(10, &mut rng).unwrap();
    let mut params = ParamSet::new();
    let model = Dhgnn::new(config(10, 3), &mut params, &mut rng).unwrap();
    for name in ["fusion.forward.w1", "fusion.backward.w1"] {
        params.get_mut(params.find(name).unwrap()).fill(0.0);
    }
    let (_, q) = fuse_eval(&model, &params, &g, &x);
    assert!(q.as_slice().iter().all(|&v| v == 0.5));
}

#[test]
fn identical_adjacency_rows_give_identical_embeddings() {
    // Nodes 0 and 1 share out-neighbours {2, 3}; node 4 has none.
    let g = DirectedGraph::new(5, &[(0, 2), (0, 3), (1, 2), (1, 3), (2, 4)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let model = Dhgnn::new(config(5, 3), &mut params, &mut rng).unwrap();
    for m in params.values_mut() {
        m.as_mut_slice().iter_mut().for_each(|v| *v += 0.05);
    }
    let ops = GraphOps::new(&g);
    let mut t = Tape::new();
    let p = params.bind_frozen(&mut t);
    let a = model.adjacency_embedding(&mut t, &p, &ops, Direction::Forward).unwrap().unwrap();
    let a = t.value(a).clone();
    assert_eq!(a.row(0), a.row(1));
    assert_ne!(a.row(0), a.row(2));

    // A zero row sees only the bias path: perturbing the first-layer weights leaves it alone.
    let w = params.find("fusion.adj0.w").unwrap();
    params.get_mut(w).as_mut_slice().iter_mut().for_each(|v| *v += 10.0);
    let mut t = Tape::new();
    let p = params.bind_frozen(&mut t);
    let b = model.adjacency_embedding(&mut t, &p, &ops, Direction::Forward).unwrap().unwrap();
    assert_eq!(t.value(b).row(4), a.row(4));
    assert_ne!(t.value(b).row(0), a.row(0));
}

#[test]
fn node_relabelling_permutes_fused_rows() {
    let n = 14;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (g, x, _) = random_instance(n, &mut rng).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let edges: Vec<_> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
    let gp = DirectedGraph::new(n, &edges).unwrap();
    let mut xp = Matrix::zeros(n, x.cols());
    for (v, &pv) in perm.iter().enumerate() {
        xp.row_mut(pv).copy_from_slice(x.row(v));
    }

    let mut params = ParamSet::new();
    let model = Dhgnn::new(config(n, 3), &mut params, &mut rng).unwrap();
    // The first adjacency layer is indexed by neighbour id, so relabel its rows as well.
    let mut pp = params.clone();
    let w = params.find("fusion.adj0.w").unwrap();
    for (v, &pv) in perm.iter().enumerate() {
        pp.get_mut(w).row_mut(pv).copy_from_slice(params.get(w).row(v));
    }

    let (fused, q) = fuse_eval(&model, &params, &g, &x);
    let (fused_p, q_p) = fuse_eval(&model, &pp, &gp, &xp);
    for v in 0..n {
        for (a, b) in fused.row(v).iter().zip(fused_p.row(perm[v])) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((q[(v, 0)] - q_p[(perm[v], 0)]).abs() < 1e-12);
    }
}

#[test]
fn twelve_node_forward_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (g, x, _) = random_instance(12, &mut rng).unwrap();
        let net = Network::init(config(12, 3), Task::NodeClassification, 3, &mut rng).unwrap();
        net.infer(&GraphOps::new(&g), &x).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.fused, b.fused);
    assert_eq!(a.traces[0].gates, b.traces[0].gates);
}

#[test]
fn mismatched_graph_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Network::init(config(5, 3), Task::NodeClassification, 3, &mut rng).unwrap();
    let g = DirectedGraph::new(6, &[(0, 1)]).unwrap();
    assert!(net.infer(&GraphOps::new(&g), &Matrix::zeros(6, 3)).is_err());
}
