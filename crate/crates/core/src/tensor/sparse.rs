use crate::graph::{DirectedGraph, Direction};

use super::Matrix;

/// Weighted CSR operator `S` (rows x cols) used for neighbourhood gathers,
/// stored together with its transpose for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseRows {
    fn from_graph(g: &DirectedGraph, dir: Direction, weight: impl Fn(usize) -> f64) -> Self {
        let offsets = g.offsets(dir).to_vec();
        let indices = g.targets(dir).to_vec();
        let mut weights = Vec::with_capacity(indices.len());
        for v in 0..g.num_nodes() {
            let deg = offsets[v + 1] - offsets[v];
            weights.extend(std::iter::repeat_n(weight(deg), deg));
        }
        SparseRows {
            rows: g.num_nodes(),
            cols: g.num_nodes(),
            offsets,
            indices,
            weights,
        }
    }

    /// Row `v` averages over `v`'s neighbours in `dir`; isolated rows are zero.
    pub fn mean_aggregator(g: &DirectedGraph, dir: Direction) -> Self {
        Self::from_graph(g, dir, |deg| 1.0 / deg as f64)
    }

    /// The 0/1 adjacency rows of `dir` (forward: rows of `A`, backward: rows of `A^T`).
    pub fn adjacency(g: &DirectedGraph, dir: Direction) -> Self {
        Self::from_graph(g, dir, |_| 1.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> SparseRows {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.indices.len()];
        let mut weights = vec![0.0; self.weights.len()];
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[k];
                indices[next[c]] = r;
                weights[next[c]] = self.weights[k];
                next[c] += 1;
            }
        }
        SparseRows {
            rows: self.cols,
            cols: self.rows,
            offsets,
            indices,
            weights,
        }
    }

    /// `S * x`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.cols, x.rows(), "sparse apply dimension");
        let p = x.cols();
        let mut out = Matrix::zeros(self.rows, p);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let w = self.weights[k];
                for (o, &v) in out_row.iter_mut().zip(x.row(self.indices[k])) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.offsets[r]..self.offsets[r + 1] {
                m[(r, self.indices[k])] += self.weights[k];
            }
        }
        m
    }
}

/// A sparse operator with its transpose precomputed.
#[derive(Debug, Clone)]
pub struct SparseOp {
    pub forward: SparseRows,
    pub transpose: SparseRows,
}

impl SparseOp {
    pub fn new(forward: SparseRows) -> Self {
        let transpose = forward.transpose();
        SparseOp { forward, transpose }
    }
}
