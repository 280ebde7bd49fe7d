//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dhgnn_core::graph::Direction;
use dhgnn_core::model::{GraphOps, ParamGroup, PassMode};
use dhgnn_core::objective::{self, ObjectiveConfig, Supervision};
use dhgnn_core::tensor::{Matrix, Tape};
use dhgnn_core::train::{random_instance, rng_for, Network, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const INF: usize = usize::MAX / 4;

/// All-pairs shortest path lengths by Floyd-Warshall over the raw edge list.
pub fn distances(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![INF; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0;
    }
    for &(u, v) in edges {
        if u != v {
            d[u][v] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

pub struct Oracle {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub dist: Vec<Vec<usize>>,
}

impl Oracle {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        Oracle {
            n,
            edges: edges.iter().copied().collect(),
            dist: distances(n, edges),
        }
    }

    pub fn ring(&self, v: usize, k: usize, dir: Direction) -> Vec<usize> {
        (0..self.n)
            .filter(|&u| match dir {
                Direction::Forward => self.dist[v][u] == k,
                Direction::Backward => self.dist[u][v] == k,
            })
            .collect()
    }

    pub fn node(&self, labels: &[usize], v: usize, k: usize, dir: Direction) -> Option<f64> {
        let ring = self.ring(v, k, dir);
        if ring.is_empty() {
            return None;
        }
        let same = ring.iter().filter(|&&u| labels[u] == labels[v]).count();
        Some(same as f64 / ring.len() as f64)
    }

    pub fn curve(&self, labels: &[usize], max_k: usize, dir: Direction) -> Vec<(Option<f64>, usize)> {
        (1..=max_k)
            .map(|k| {
                let vals: Vec<f64> = (0..self.n).filter_map(|v| self.node(labels, v, k, dir)).collect();
                let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                (mean, vals.len())
            })
            .collect()
    }

    pub fn edge(&self, labels: &[usize]) -> Option<f64> {
        if self.edges.is_empty() {
            return None;
        }
        let same = self.edges.iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
        Some(same as f64 / self.edges.len() as f64)
    }
}

pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize)>, Vec<usize>) {
    let p = rng.random_range(0.02..0.15);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    // A few duplicates, which the graph merges.
    for _ in 0..3 {
        if let Some(&e) = edges.get(rng.random_range(0..edges.len().max(1))) {
            edges.push(e);
        }
    }
    let classes = rng.random_range(2..5);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (edges, labels)
}

/// Gradients of the main and branch terms on a random instance.
pub fn split_gradients(seed: u64) -> (Vec<ParamGroup>, Vec<Matrix>, Vec<Matrix>) {
    let mut rng = rng_for(seed, 0);
    let (g, x, labels) = random_instance(15, &mut rng).unwrap();
    let mut cfg = TrainConfig::synthetic_default();
    cfg.hidden = 8;
    cfg.chunk_size = 2;
    cfg.adj_coef = 0.5;
    let net = Network::for_task(&cfg, 15, 3, 3, &mut rng).unwrap();
    let ops = GraphOps::new(&g);
    let nodes: Vec<usize> = (0..15).collect();
    let sup = Supervision::nodes(&nodes, &labels);
    let obj = ObjectiveConfig::new(0.5, 0.7, 2.0);
    let mut t = Tape::new();
    let p = net.params.bind(&mut t);
    let xv = t.constant(x);
    let out = objective::evaluate(
        &net.model, &net.heads, &mut t, &p, &ops, xv, &sup, &obj, PassMode::TRAIN, None, &mut rng,
    )
    .unwrap();
    t.backward(out.main).unwrap();
    let main = p.grads(&t, &net.params);
    t.zero_grad();
    let [bf, bb] = out.branch.unwrap();
    let b = t.add(bf, bb).unwrap();
    t.backward(b).unwrap();
    let branch = p.grads(&t, &net.params);
    let groups = net.params.ids().map(|id| net.params.group(id)).collect();
    (groups, main, branch)
}
