use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, Split};

use super::LinkNegatives;

pub const NODE_SPLIT_RATIOS: [f64; 3] = [0.48, 0.32, 0.20];

/// Random node partitions. Stratified by class unless some class has fewer than
/// three nodes, in which case `stratified` is false and the split is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplits {
    pub splits: Vec<Split>,
    pub stratified: bool,
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| !(r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be >= 0 and sum to 1, got {ratios:?}")));
    }
    Ok(())
}

/// Partitions all nodes into train/val/test `num_splits` times.
///
/// Stratification orders nodes by their (shuffled) rank within their class
/// relative to the class size, so any prefix holds each class in proportion
/// to within one node.
pub fn make_node_splits<R: Rng + ?Sized>(
    labels: &[usize],
    num_splits: usize,
    ratios: [f64; 3],
    rng: &mut R,
) -> Result<NodeSplits> {
    check_ratios(ratios)?;
    let n = labels.len();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (v, &c) in labels.iter().enumerate() {
        by_class[c].push(v);
    }
    let stratified = by_class.iter().all(|members| members.is_empty() || members.len() >= 3);
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[0] + ratios[1]) * n as f64).round() as usize - n_train;

    let mut splits = Vec::with_capacity(num_splits);
    for _ in 0..num_splits {
        let order: Vec<usize> = if stratified {
            let mut keyed = Vec::with_capacity(n);
            for members in &mut by_class {
                members.shuffle(rng);
                let size = members.len() as f64;
                for (rank, &v) in members.iter().enumerate() {
                    keyed.push(((rank as f64 + 0.5) / size, rng.random::<u64>(), v));
                }
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|k| k.2).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(rng);
            all
        };
        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..n_train + n_val].to_vec();
        let mut test = order[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        splits.push(Split { train, val, test });
    }
    Ok(NodeSplits { splits, stratified })
}

/// Held-out edge split for link prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    /// Training positives only; validation and test positives are removed.
    #[serde(skip)]
    pub message_graph: Option<DirectedGraph>,
}

impl LinkSplit {
    pub fn graph(&self) -> &DirectedGraph {
        self.message_graph.as_ref().expect("link split carries its message graph")
    }
}

/// Shuffles the edges of `g` into train/val/test positives and pairs each
/// positive with a negative: a directed non-edge of `g`, never a self-loop.
pub fn make_link_split<R: Rng + ?Sized>(
    g: &DirectedGraph,
    ratios: [f64; 3],
    negatives: LinkNegatives,
    rng: &mut R,
) -> Result<LinkSplit> {
    check_ratios(ratios)?;
    let n = g.num_nodes();
    let m = g.num_edges();
    let possible = n * n.saturating_sub(1);
    let self_loops = g.edges().filter(|(u, v)| u == v).count();
    let free = possible - (m - self_loops);
    if m == 0 || m - self_loops >= possible || free < m {
        return Err(Error::MalformedInput(format!(
            "cannot sample {m} negatives: {n} nodes, {m} edges"
        )));
    }

    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    edges.shuffle(rng);
    let n_val = (ratios[1] * m as f64).round() as usize;
    let n_test = (ratios[2] * m as f64).round() as usize;
    let n_train = m - n_val - n_test;
    let test_pos = edges[..n_test].to_vec();
    let val_pos = edges[n_test..n_test + n_val].to_vec();
    let train_pos = edges[n_test + n_val..].to_vec();
    debug_assert_eq!(train_pos.len(), n_train);

    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let sample_uniform = |used: &mut HashSet<(usize, usize)>, rng: &mut R| loop {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !g.has_edge(u, v) && used.insert((u, v)) {
            return (u, v);
        }
    };
    let mut negatives_for = |pos: &[(usize, usize)], rng: &mut R| -> Vec<(usize, usize)> {
        pos.iter()
            .map(|&(u, v)| match negatives {
                LinkNegatives::Reversed if u != v && !g.has_edge(v, u) && used.insert((v, u)) => (v, u),
                _ => sample_uniform(&mut used, rng),
            })
            .collect()
    };
    let train_neg = negatives_for(&train_pos, rng);
    let val_neg = negatives_for(&val_pos, rng);
    let test_neg = negatives_for(&test_pos, rng);

    let mut held_out = val_pos.clone();
    held_out.extend_from_slice(&test_pos);
    let message_graph = g.without_edges(&held_out);
    Ok(LinkSplit {
        train_pos,
        val_pos,
        test_pos,
        train_neg,
        val_neg,
        test_neg,
        message_graph: Some(message_graph),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hundred_nodes_48_32_20() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = make_node_splits(&labels, 10, NODE_SPLIT_RATIOS, &mut rng).unwrap();
        assert!(s.stratified);
        assert_eq!(s.splits.len(), 10);
        for split in &s.splits {
            assert_eq!((split.train.len(), split.val.len(), split.test.len()), (48, 32, 20));
            let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<_>>());
            for c in 0..4 {
                let count = split.train.iter().filter(|&&v| labels[v] == c).count() as f64;
                assert!((count - 0.48 * 25.0).abs() <= 1.0, "class {c}: {count}");
            }
        }
        assert_ne!(s.splits[0], s.splits[1]);
    }

    #[test]
    fn tiny_class_falls_back() {
        let mut labels = vec![0; 20];
        labels[3] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = make_node_splits(&labels, 1, NODE_SPLIT_RATIOS, &mut rng).unwrap();
        assert!(!s.stratified);
        assert_eq!(s.splits[0].train.len() + s.splits[0].val.len() + s.splits[0].test.len(), 20);
    }

    #[test]
    fn ten_edges_split_8_1_1() {
        let edges: Vec<_> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        let g = DirectedGraph::new(10, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_link_split(&g, [0.8, 0.1, 0.1], LinkNegatives::Uniform, &mut rng).unwrap();
        assert_eq!((s.train_pos.len(), s.val_pos.len(), s.test_pos.len()), (8, 1, 1));
        assert_eq!((s.train_neg.len(), s.val_neg.len(), s.test_neg.len()), (8, 1, 1));
        for &(u, v) in s.train_neg.iter().chain(&s.val_neg).chain(&s.test_neg) {
            assert!(!g.has_edge(u, v) && u != v);
        }
        for &(u, v) in s.val_pos.iter().chain(&s.test_pos) {
            assert!(!s.graph().has_edge(u, v));
        }
        assert_eq!(s.graph().num_edges(), 8);
    }

    #[test]
    fn reversed_negatives_flip_positives() {
        let edges: Vec<_> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        let g = DirectedGraph::new(10, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_link_split(&g, [0.8, 0.1, 0.1], LinkNegatives::Reversed, &mut rng).unwrap();
        for (&(u, v), &neg) in s.train_pos.iter().zip(&s.train_neg) {
            assert_eq!(neg, (v, u));
        }
    }

    #[test]
    fn complete_graph_is_rejected() {
        let edges: Vec<_> = (0..3).flat_map(|u| (0..3).filter(move |&v| v != u).map(move |v| (u, v))).collect();
        let g = DirectedGraph::new(3, &edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_link_split(&g, [0.8, 0.1, 0.1], LinkNegatives::Uniform, &mut rng).is_err());
    }
}
