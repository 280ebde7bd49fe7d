//! Directed graph storage and labelled datasets.
//!
//! A [`DirectedGraph`] keeps two CSR views of the same edge set: the forward
//! view lists out-neighbours (`i -> j` stored in row `i`), the backward view
//! lists in-neighbours (`i -> j` stored in row `j`). Rows are sorted and
//! duplicate-free.

mod diagnostics;
pub mod io;

pub use diagnostics::{
    avg_homophily_curve, class_connection_matrix, edge_homophily, k_hop_neighbors,
    k_hop_rings, node_homophily, HomophilyCurve, HopStat,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Edge orientation used for traversal and message passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Follow edges as stored (`v` sees its out-neighbours).
    Forward,
    /// Follow reversed edges (`v` sees its in-neighbours).
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// `pairs` must be sorted by (row, col) and duplicate-free.
    fn from_sorted(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::new();
        for (r, c) in pairs {
            offsets[r + 1] += 1;
            targets.push(c);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Csr { offsets, targets }
    }

    fn row(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Immutable directed graph with forward and backward CSR adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    fwd: Csr,
    bwd: Csr,
}

impl DirectedGraph {
    /// Builds both CSR views. Duplicate edges are merged; self-loops are kept.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if let Some(&(s, t)) = edges.iter().find(|&&(s, t)| s >= n || t >= n) {
            return Err(Error::MalformedInput(format!(
                "edge ({s}, {t}) has an endpoint >= node count {n}"
            )));
        }
        let mut fwd_pairs = edges.to_vec();
        fwd_pairs.sort_unstable();
        fwd_pairs.dedup();
        let mut bwd_pairs: Vec<(usize, usize)> = fwd_pairs.iter().map(|&(s, t)| (t, s)).collect();
        bwd_pairs.sort_unstable();
        Ok(DirectedGraph {
            n,
            fwd: Csr::from_sorted(n, fwd_pairs.into_iter()),
            bwd: Csr::from_sorted(n, bwd_pairs.into_iter()),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.fwd.targets.len()
    }

    /// Neighbours of `v` in the given direction, sorted ascending.
    pub fn neighbors(&self, v: usize, dir: Direction) -> &[usize] {
        match dir {
            Direction::Forward => self.fwd.row(v),
            Direction::Backward => self.bwd.row(v),
        }
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.fwd.row(v).len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.bwd.row(v).len()
    }

    pub fn offsets(&self, dir: Direction) -> &[usize] {
        match dir {
            Direction::Forward => &self.fwd.offsets,
            Direction::Backward => &self.bwd.offsets,
        }
    }

    pub fn targets(&self, dir: Direction) -> &[usize] {
        match dir {
            Direction::Forward => &self.fwd.targets,
            Direction::Backward => &self.bwd.targets,
        }
    }

    /// All edges `(src, dst)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |v| self.fwd.row(v).iter().map(move |&t| (v, t)))
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        src < self.n && self.fwd.row(src).binary_search(&dst).is_ok()
    }

    /// The same nodes with every edge flipped.
    pub fn reverse(&self) -> DirectedGraph {
        DirectedGraph {
            n: self.n,
            fwd: self.bwd.clone(),
            bwd: self.fwd.clone(),
        }
    }

    /// Closes the edge set under reversal.
    pub fn symmetrize(&self) -> DirectedGraph {
        let edges: Vec<(usize, usize)> = self
            .edges()
            .flat_map(|(s, t)| [(s, t), (t, s)])
            .collect();
        DirectedGraph::new(self.n, &edges).expect("endpoints already validated")
    }

    /// Graph with the listed edges removed (used to hide held-out link positives).
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> DirectedGraph {
        let mut drop: Vec<(usize, usize)> = removed.to_vec();
        drop.sort_unstable();
        let kept: Vec<(usize, usize)> = self
            .edges()
            .filter(|e| drop.binary_search(e).is_err())
            .collect();
        DirectedGraph::new(self.n, &kept).expect("endpoints already validated")
    }
}

/// One train/validation/test partition, stored as sorted node lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn nodes(&self, kind: MaskKind) -> &[usize] {
        match kind {
            MaskKind::Train => &self.train,
            MaskKind::Val => &self.val,
            MaskKind::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Train,
    Val,
    Test,
}

/// Graph, node features, labels, and evaluation splits.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub graph: DirectedGraph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

impl LabeledDataset {
    /// Checks shape agreement, label range, and per-split mask disjointness.
    pub fn new(
        graph: DirectedGraph,
        features: Matrix,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::MalformedInput(format!(
                "features have {} rows but the graph has {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::MalformedInput(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        for (i, split) in splits.iter().enumerate() {
            let mut seen = vec![false; n];
            for kind in [MaskKind::Train, MaskKind::Val, MaskKind::Test] {
                for &v in split.nodes(kind) {
                    if v >= n {
                        return Err(Error::MalformedInput(format!(
                            "split {i}: node {v} out of range"
                        )));
                    }
                    if seen[v] {
                        return Err(Error::MalformedInput(format!(
                            "split {i}: node {v} appears in more than one mask"
                        )));
                    }
                    seen[v] = true;
                }
            }
        }
        Ok(LabeledDataset {
            graph,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Same features, labels, and splits over a different edge set.
    pub fn with_graph(&self, graph: DirectedGraph) -> LabeledDataset {
        assert_eq!(graph.num_nodes(), self.num_nodes());
        LabeledDataset {
            graph,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_reversal() {
        let g = DirectedGraph::new(3, &[(0, 1), (0, 2)]).unwrap();
        assert_eq!(g.neighbors(0, Direction::Forward), &[1, 2]);
        assert_eq!(g.neighbors(1, Direction::Backward), &[0]);
        assert_eq!(g.neighbors(2, Direction::Backward), &[0]);
        assert!(g.neighbors(0, Direction::Backward).is_empty());
        assert_eq!(g.offsets(Direction::Forward), &[0, 2, 2, 2]);
    }

    #[test]
    fn empty_graph() {
        let g = DirectedGraph::new(2, &[]).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert!(g.neighbors(0, Direction::Forward).is_empty());
        assert!(g.neighbors(1, Direction::Backward).is_empty());
    }

    #[test]
    fn duplicates_merged_and_rows_sorted() {
        let g = DirectedGraph::new(2, &[(0, 1), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        let g = DirectedGraph::new(4, &[(0, 3), (0, 1), (0, 2), (1, 1)]).unwrap();
        assert_eq!(g.neighbors(0, Direction::Forward), &[1, 2, 3]);
        assert!(g.has_edge(1, 1));
    }

    #[test]
    fn endpoint_out_of_range_rejected() {
        let err = DirectedGraph::new(2, &[(0, 2)]).unwrap_err();
        assert!(matches!(err, Error::MalformedInput(_)));
    }

    #[test]
    fn symmetrize_cases() {
        let g = DirectedGraph::new(2, &[(0, 1)]).unwrap();
        let s = g.symmetrize();
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(s.symmetrize(), s);
        assert!(s.num_edges() <= 2 * g.num_edges());
    }

    #[test]
    fn without_edges_removes_only_listed() {
        let g = DirectedGraph::new(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let h = g.without_edges(&[(1, 2)]);
        assert_eq!(h.edges().collect::<Vec<_>>(), vec![(0, 1), (2, 0)]);
    }

    #[test]
    fn dataset_rejects_overlapping_masks() {
        let g = DirectedGraph::new(3, &[]).unwrap();
        let split = Split {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        let err = LabeledDataset::new(g, Matrix::zeros(3, 1), vec![0, 1, 0], vec![split]);
        assert!(err.is_err());
    }

    use proptest::prelude::*;

    fn arb_graph() -> impl Strategy<Value = DirectedGraph> {
        (1usize..20).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60)
                .prop_map(move |edges| DirectedGraph::new(n, &edges).unwrap())
        })
    }

    proptest! {
        #[test]
        fn views_hold_same_edge_set(g in arb_graph()) {
            let n = g.num_nodes();
            for v in 0..n {
                for &t in g.neighbors(v, Direction::Forward) {
                    prop_assert!(g.neighbors(t, Direction::Backward).contains(&v));
                }
                for &s in g.neighbors(v, Direction::Backward) {
                    prop_assert!(g.neighbors(s, Direction::Forward).contains(&v));
                }
            }
            for dir in Direction::BOTH {
                let off = g.offsets(dir);
                prop_assert!(off.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(*off.last().unwrap(), g.num_edges());
                prop_assert!(g.targets(dir).iter().all(|&t| t < n));
            }
        }

        #[test]
        fn symmetrize_ignores_orientation(g in arb_graph()) {
            prop_assert_eq!(g.symmetrize(), g.reverse().symmetrize());
        }
    }
}
