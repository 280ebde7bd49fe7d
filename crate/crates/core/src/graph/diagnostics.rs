//! Homophily and class-structure diagnostics over a [`DirectedGraph`].
//!
//! Hop `k` means shortest-path distance exactly `k` along the chosen
//! direction, so the rings for `k = 1..K` are disjoint. Nodes whose ring is
//! empty do not contribute to the hop average.

use std::collections::VecDeque;

use serde::Serialize;

use super::{DirectedGraph, Direction};
use crate::tensor::Matrix;

/// Nodes at exact distances `1..=max_k` from `v`, one sorted ring per hop.
pub fn k_hop_rings(g: &DirectedGraph, v: usize, max_k: usize, dir: Direction) -> Vec<Vec<usize>> {
    let mut rings = vec![Vec::new(); max_k];
    let mut dist = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::new();
    dist[v] = 0;
    queue.push_back(v);
    while let Some(u) = queue.pop_front() {
        let d = dist[u];
        if d == max_k {
            continue;
        }
        for &w in g.neighbors(u, dir) {
            if dist[w] == usize::MAX {
                dist[w] = d + 1;
                rings[d].push(w);
                queue.push_back(w);
            }
        }
    }
    for ring in &mut rings {
        ring.sort_unstable();
    }
    rings
}

/// Nodes at shortest-path distance exactly `k` (`k >= 1`) from `v`.
pub fn k_hop_neighbors(g: &DirectedGraph, v: usize, k: usize, dir: Direction) -> Vec<usize> {
    assert!(k >= 1, "hop count must be at least 1");
    k_hop_rings(g, v, k, dir).pop().unwrap_or_default()
}

fn ring_ratio(labels: &[usize], v: usize, ring: &[usize]) -> Option<f64> {
    if ring.is_empty() {
        return None;
    }
    let same = ring.iter().filter(|&&u| labels[u] == labels[v]).count();
    Some(same as f64 / ring.len() as f64)
}

/// Fraction of `v`'s exact-`k`-hop neighbours sharing its label; `None` if there are none.
pub fn node_homophily(
    g: &DirectedGraph,
    labels: &[usize],
    v: usize,
    k: usize,
    dir: Direction,
) -> Option<f64> {
    ring_ratio(labels, v, &k_hop_neighbors(g, v, k, dir))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopStat {
    pub hop: usize,
    /// Mean node-wise ratio over contributing nodes; `None` when no node contributes.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomophilyCurve {
    pub direction: Direction,
    pub hops: Vec<HopStat>,
}

impl HomophilyCurve {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.hops.iter().map(|h| h.mean).collect()
    }
}

/// Average node-wise homophily for each hop `1..=max_k`.
pub fn avg_homophily_curve(
    g: &DirectedGraph,
    labels: &[usize],
    max_k: usize,
    dir: Direction,
) -> HomophilyCurve {
    assert!(max_k >= 1, "max_k must be at least 1");
    let mut sums = vec![0.0f64; max_k];
    let mut counts = vec![0usize; max_k];
    for v in 0..g.num_nodes() {
        for (k, ring) in k_hop_rings(g, v, max_k, dir).iter().enumerate() {
            if let Some(r) = ring_ratio(labels, v, ring) {
                sums[k] += r;
                counts[k] += 1;
            }
        }
    }
    let hops = (0..max_k)
        .map(|k| HopStat {
            hop: k + 1,
            mean: (counts[k] > 0).then(|| sums[k] / counts[k] as f64),
            count: counts[k],
        })
        .collect();
    HomophilyCurve {
        direction: dir,
        hops,
    }
}

/// Fraction of directed edges whose endpoints share a label; `None` for an edgeless graph.
pub fn edge_homophily(g: &DirectedGraph, labels: &[usize]) -> Option<f64> {
    let m = g.num_edges();
    if m == 0 {
        return None;
    }
    let same = g.edges().filter(|&(s, t)| labels[s] == labels[t]).count();
    Some(same as f64 / m as f64)
}

/// `C x C` counts of edges from class-`i` sources to class-`j` targets.
///
/// With `normalize`, each row is divided by its sum; all-zero rows stay zero.
pub fn class_connection_matrix(
    g: &DirectedGraph,
    labels: &[usize],
    num_classes: usize,
    normalize: bool,
) -> Matrix {
    let mut m = Matrix::zeros(num_classes, num_classes);
    for (s, t) in g.edges() {
        m[(labels[s], labels[t])] += 1.0;
    }
    if normalize {
        for i in 0..num_classes {
            let total: f64 = m.row(i).iter().sum();
            if total > 0.0 {
                m.row_mut(i).iter_mut().for_each(|x| *x /= total);
            }
        }
    }
    m
}
