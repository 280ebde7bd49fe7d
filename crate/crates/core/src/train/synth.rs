//! Synthetic directed graphs whose forward and backward node homophily differ.
//!
//! Node-wise homophily averaged over nodes can only differ between the two
//! directions through degree heterogeneity (every edge counts once in each
//! direction). The generator therefore routes edges through a small set of
//! class-balanced hubs: each regular node sends its out-edges to hubs
//! (same-class with probability `fwd'`) and receives its in-edges from hubs
//! (same-class with probability `bwd'`). Hubs see the mirror image, so the
//! planted probabilities are corrected for the hub share `h`:
//!
//! ```text
//! fwd' = ((1 - h) fwd - h bwd) / (1 - 2h)
//! bwd' = ((1 - h) bwd - h fwd) / (1 - 2h)
//! ```
//!
//! which makes the node-averaged hop-1 homophily equal `fwd` and `bwd` in expectation.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, LabeledDataset};
use crate::tensor::Matrix;

use super::splits::{make_node_splits, NODE_SPLIT_RATIOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub classes: usize,
    pub fwd_hom: f64,
    pub bwd_hom: f64,
    /// Target average out-degree; split evenly between the outgoing and incoming process.
    pub degree: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub num_splits: usize,
}

impl SynthParams {
    pub fn new(n: usize, classes: usize, fwd_hom: f64, bwd_hom: f64, degree: usize, noise: f64) -> Self {
        SynthParams {
            n,
            classes,
            fwd_hom,
            bwd_hom,
            degree,
            noise,
            num_splits: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, h) in [("fwd_hom", self.fwd_hom), ("bwd_hom", self.bwd_hom)] {
            if !(0.0..=1.0).contains(&h) {
                return bad(format!("{name} must lie in [0, 1], got {h}"));
            }
        }
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.degree < 2 {
            return bad("degree must be >= 2".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        let hubs = self.hubs_per_class() * self.classes;
        if self.n < 2 * hubs + self.classes {
            return bad(format!(
                "n = {} too small for {} classes at degree {} (need at least {})",
                self.n,
                self.classes,
                self.degree,
                2 * hubs + self.classes
            ));
        }
        Ok(())
    }

    fn out_degree(&self) -> usize {
        self.degree.div_ceil(2)
    }

    fn in_degree(&self) -> usize {
        self.degree - self.out_degree()
    }

    fn hubs_per_class(&self) -> usize {
        self.out_degree().max(self.in_degree()).max(1)
    }
}

/// Generated dataset together with the edges of each generating process.
#[derive(Debug, Clone)]
pub struct SyntheticGraph {
    pub dataset: LabeledDataset,
    /// Regular node -> hub edges.
    pub forward_edges: Vec<(usize, usize)>,
    /// Hub -> regular node edges.
    pub backward_edges: Vec<(usize, usize)>,
    pub hubs: usize,
}

/// Corrected per-process same-class probabilities for hub share `h`.
pub fn corrected_probabilities(fwd: f64, bwd: f64, h: f64) -> (f64, f64) {
    let f = ((1.0 - h) * fwd - h * bwd) / (1.0 - 2.0 * h);
    let b = ((1.0 - h) * bwd - h * fwd) / (1.0 - 2.0 * h);
    (f.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

pub fn synth_directed_homophily<R: Rng + ?Sized>(params: &SynthParams, rng: &mut R) -> Result<SyntheticGraph> {
    params.validate()?;
    let SynthParams { n, classes, .. } = *params;
    let labels: Vec<usize> = (0..n).map(|v| v % classes).collect();
    let hubs = params.hubs_per_class() * classes;
    let h = hubs as f64 / n as f64;
    let (p_out, p_in) = corrected_probabilities(params.fwd_hom, params.bwd_hom, h);

    let mut hubs_by_class = vec![Vec::new(); classes];
    for hub in 0..hubs {
        hubs_by_class[labels[hub]].push(hub);
    }
    let others: Vec<Vec<usize>> = (0..classes)
        .map(|c| (0..hubs).filter(|&u| labels[u] != c).collect())
        .collect();

    let pick = |c: usize, count: usize, p_same: f64, rng: &mut R| -> Vec<usize> {
        let mut chosen = Vec::with_capacity(count);
        while chosen.len() < count {
            let pool = if rng.random::<f64>() < p_same { &hubs_by_class[c] } else { &others[c] };
            let free: Vec<usize> = pool.iter().copied().filter(|u| !chosen.contains(u)).collect();
            if let Some(&u) = free.choose(rng) {
                chosen.push(u);
            }
        }
        chosen
    };

    let mut forward_edges = Vec::new();
    let mut backward_edges = Vec::new();
    for (v, &c) in labels.iter().enumerate().skip(hubs) {
        for hub in pick(c, params.out_degree(), p_out, rng) {
            forward_edges.push((v, hub));
        }
        for hub in pick(c, params.in_degree(), p_in, rng) {
            backward_edges.push((hub, v));
        }
    }

    let mut data = Vec::with_capacity(n * classes);
    for &y in &labels {
        for j in 0..classes {
            let centroid = if j == y { 1.0 } else { 0.0 };
            data.push(centroid + params.noise * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let features = Matrix::from_vec(n, classes, data);

    let mut edges = forward_edges.clone();
    edges.extend_from_slice(&backward_edges);
    let graph = DirectedGraph::new(n, &edges)?;
    let splits = make_node_splits(&labels, params.num_splits, NODE_SPLIT_RATIOS, rng)?.splits;
    let dataset = LabeledDataset::new(graph, features, labels, splits)?;
    Ok(SyntheticGraph {
        dataset,
        forward_edges,
        backward_edges,
        hubs,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{avg_homophily_curve, Direction};

    fn edge_hom(edges: &[(usize, usize)], labels: &[usize]) -> f64 {
        edges.iter().filter(|&&(u, v)| labels[u] == labels[v]).count() as f64 / edges.len() as f64
    }

    #[test]
    fn correction_reproduces_targets() {
        let (f, b) = corrected_probabilities(0.85, 0.15, 0.06);
        assert!(((1.0 - 0.06) * f + 0.06 * b - 0.85).abs() < 1e-12);
        assert!(((1.0 - 0.06) * b + 0.06 * f - 0.15).abs() < 1e-12);
    }

    #[test]
    fn planted_homophily_is_measured() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SynthParams::new(600, 3, 0.9, 0.1, 8, 0.5);
        let s = synth_directed_homophily(&p, &mut rng).unwrap();
        let ds = &s.dataset;
        assert!((edge_hom(&s.forward_edges, &ds.labels) - 0.9).abs() < 0.03);
        let fwd = avg_homophily_curve(&ds.graph, &ds.labels, 1, Direction::Forward);
        let bwd = avg_homophily_curve(&ds.graph, &ds.labels, 1, Direction::Backward);
        assert!((fwd.hops[0].mean.unwrap() - 0.9).abs() < 0.03);
        assert!((bwd.hops[0].mean.unwrap() - 0.1).abs() < 0.03);
        assert_eq!(ds.graph.num_edges(), s.forward_edges.len() + s.backward_edges.len());
        assert!((ds.graph.num_edges() as f64 / 600.0 - 8.0).abs() < 1.0);
    }

    #[test]
    fn seed_stable() {
        let p = SynthParams::new(80, 2, 0.7, 0.3, 4, 0.2);
        let a = synth_directed_homophily(&p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = synth_directed_homophily(&p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.dataset.features, b.dataset.features);
        assert_eq!(a.forward_edges, b.forward_edges);
        assert_eq!(a.dataset.splits, b.dataset.splits);
    }

    #[test]
    fn rejects_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synth_directed_homophily(&SynthParams::new(100, 2, 1.2, 0.1, 4, 0.1), &mut rng).is_err());
        assert!(synth_directed_homophily(&SynthParams::new(10, 3, 0.5, 0.5, 8, 0.1), &mut rng).is_err());
    }
}
