//! Training objective:
//!
//! ```text
//! L = (1 - l2) (L_cls + l1 L_imp) + l2 (L_branch_fwd + L_branch_bwd) / 2
//! ```
//!
//! `L_cls` and `L_imp` are computed on detached directional embeddings, so
//! the encoders learn only through the per-direction branch heads.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Direction;
use crate::model::{BoundParams, Dhgnn, EncoderOutput, GraphOps, Linear, ParamGroup, ParamSet, PassMode};
use crate::tensor::{Matrix, Tape, Targets, Var};

/// Loss weights and term switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// `l1`, weight of the importance loss.
    pub imp_coef: f64,
    /// `l2`, weight of the branch loss.
    pub branch_coef: f64,
    pub focal_gamma: f64,
    /// Branch loss enabled. Disabling it also removes the stop-gradient.
    pub use_branch: bool,
    pub use_importance: bool,
}

impl ObjectiveConfig {
    pub fn new(imp_coef: f64, branch_coef: f64, focal_gamma: f64) -> Self {
        ObjectiveConfig {
            imp_coef,
            branch_coef,
            focal_gamma,
            use_branch: true,
            use_importance: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imp_coef >= 0.0) {
            return Err(Error::Config(format!("imp_coef must be >= 0, got {}", self.imp_coef)));
        }
        if !(0.0..=1.0).contains(&self.branch_coef) {
            return Err(Error::Config(format!(
                "branch_coef must lie in [0, 1], got {}",
                self.branch_coef
            )));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }

    fn effective_weights(&self, has_q: bool) -> (f64, f64) {
        let l1 = if self.use_importance && has_q { self.imp_coef } else { 0.0 };
        let l2 = if self.use_branch { self.branch_coef } else { 0.0 };
        (l1, l2)
    }
}

/// Values of every loss term from one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub imp: f64,
    pub branch_fwd: f64,
    pub branch_bwd: f64,
    pub total: f64,
    /// Effective `l1` (zero when the importance term is off).
    pub imp_coef: f64,
    /// Effective `l2` (zero when the branch term is off).
    pub branch_coef: f64,
    /// Column sums of `q`, `[forward, backward]`.
    pub q_sums: Option<[f64; 2]>,
}

/// The scalar combination, for reporting and as the reference identity.
pub fn total_loss(cls: f64, imp: f64, branch_fwd: f64, branch_bwd: f64, l1: f64, l2: f64) -> Result<f64> {
    if l2 > 1.0 {
        return Err(Error::Config(format!("branch_coef must be <= 1, got {l2}")));
    }
    Ok((1.0 - l2) * (cls + l1 * imp) + l2 * (branch_fwd + branch_bwd) / 2.0)
}

/// `CV^2` of the per-direction column sums of `q` (`n x 2`).
pub fn importance_loss(tape: &mut Tape, q: Var) -> Result<Var> {
    let sums = tape.sum_rows(q);
    tape.cv_squared(sums)
}

/// Supervision signal for one pass.
#[derive(Debug, Clone)]
pub enum Supervision {
    /// `(node, class)` pairs.
    Node(Targets),
    /// Ordered node pairs with 0/1 existence labels.
    Link {
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
        labels: Arc<Vec<f64>>,
    },
}

impl Supervision {
    pub fn nodes(nodes: &[usize], labels: &[usize]) -> Self {
        Supervision::Node(Arc::new(nodes.iter().map(|&v| (v, labels[v])).collect()))
    }

    pub fn pairs(pairs: &[(usize, usize)], labels: &[f64]) -> Self {
        Supervision::Link {
            src: Arc::new(pairs.iter().map(|p| p.0).collect()),
            dst: Arc::new(pairs.iter().map(|p| p.1).collect()),
            labels: Arc::new(labels.to_vec()),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Supervision::Node(t) => t.is_empty(),
            Supervision::Link { labels, .. } => labels.is_empty(),
        }
    }
}

/// Task-specific output layers on top of the network.
#[derive(Debug, Clone)]
pub enum Heads {
    /// Branch classifiers `hidden -> C`; the fused output is the class logits.
    Node { branch: [Linear; 2] },
    /// Branch scorers `2 hidden -> 1` and a two-layer pair scorer on fused embeddings.
    Link { branch: [Linear; 2], scorer: [Linear; 2] },
}

impl Heads {
    pub fn node<R: Rng + ?Sized>(params: &mut ParamSet, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Heads::Node {
            branch: Direction::BOTH.map(|d| {
                let name = format!("head.{}", d.as_str());
                Linear::new(params, &name, ParamGroup::BranchHead(d), hidden, classes, rng)
            }),
        }
    }

    /// `fused_dim` is the output width of the network's fusion layer.
    pub fn link<R: Rng + ?Sized>(params: &mut ParamSet, hidden: usize, fused_dim: usize, rng: &mut R) -> Self {
        let branch = Direction::BOTH.map(|d| {
            let name = format!("head.{}", d.as_str());
            Linear::new(params, &name, ParamGroup::BranchHead(d), 2 * hidden, 1, rng)
        });
        let scorer = [
            Linear::new(params, "link.scorer0", ParamGroup::Fusion, 2 * fused_dim, fused_dim, rng),
            Linear::new(params, "link.scorer1", ParamGroup::Fusion, fused_dim, 1, rng),
        ];
        Heads::Link { branch, scorer }
    }

    /// Logit of edge existence for each `(src[i], dst[i])` given fused embeddings.
    pub fn link_logits(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        fused: Var,
        src: Arc<Vec<usize>>,
        dst: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let Heads::Link { scorer, .. } = self else {
            return Err(Error::Contract("link scoring needs link heads".into()));
        };
        let pair = pair_features(tape, fused, src, dst)?;
        let z = scorer[0].apply(tape, p, pair)?;
        let z = tape.relu(z);
        scorer[1].apply(tape, p, z)
    }

    fn branch_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        h: Var,
        dir: Direction,
        sup: &Supervision,
    ) -> Result<Var> {
        match (self, sup) {
            (Heads::Node { branch }, Supervision::Node(targets)) => {
                let logits = branch[dir.index()].apply(tape, p, h)?;
                tape.cross_entropy(logits, targets.clone())
            }
            (Heads::Link { branch, .. }, Supervision::Link { src, dst, labels }) => {
                let pair = pair_features(tape, h, src.clone(), dst.clone())?;
                let logits = branch[dir.index()].apply(tape, p, pair)?;
                tape.bce_with_logits(logits, labels.clone())
            }
            _ => Err(Error::Contract("heads do not match the supervision kind".into())),
        }
    }

    fn main_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        fused: Var,
        sup: &Supervision,
        gamma: f64,
    ) -> Result<Var> {
        match sup {
            Supervision::Node(targets) => tape.focal_loss(fused, targets.clone(), gamma),
            Supervision::Link { src, dst, labels } => {
                let logits = self.link_logits(tape, p, fused, src.clone(), dst.clone())?;
                tape.bce_with_logits(logits, labels.clone())
            }
        }
    }
}

fn pair_features(tape: &mut Tape, h: Var, src: Arc<Vec<usize>>, dst: Arc<Vec<usize>>) -> Result<Var> {
    let hu = tape.gather_rows(h, src)?;
    let hv = tape.gather_rows(h, dst)?;
    tape.concat_cols(hu, hv)
}

/// Everything produced by one objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    pub total: Var,
    /// `L_cls + l1 L_imp`, before the `(1 - l2)` factor.
    pub main: Var,
    /// Per-direction branch losses, when enabled.
    pub branch: Option<[Var; 2]>,
    pub breakdown: LossBreakdown,
    pub fused: Var,
    pub q: Option<Var>,
    pub encoders: [EncoderOutput; 2],
}

/// Forward pass of the whole network and loss.
///
/// `frozen` replaces the detached embeddings fed to fusion with fixed values;
/// finite-difference checks use it to hold the stop-gradient inputs constant.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<R: Rng + ?Sized>(
    model: &Dhgnn,
    heads: &Heads,
    tape: &mut Tape,
    p: &BoundParams,
    ops: &GraphOps,
    features: Var,
    sup: &Supervision,
    cfg: &ObjectiveConfig,
    mode: PassMode,
    frozen: Option<&[Matrix; 2]>,
    rng: &mut R,
) -> Result<ObjectiveOutput> {
    cfg.validate()?;
    if sup.is_empty() {
        return Err(Error::Contract("empty supervision set".into()));
    }
    let enc_f = model.encode(tape, p, ops, features, Direction::Forward, mode, rng)?;
    let enc_b = model.encode(tape, p, ops, features, Direction::Backward, mode, rng)?;
    let h = [enc_f.embeddings, enc_b.embeddings];

    let mut branch = [0.0; 2];
    let mut branch_vars = None;
    if cfg.use_branch {
        let bf = heads.branch_loss(tape, p, h[0], Direction::Forward, sup)?;
        let bb = heads.branch_loss(tape, p, h[1], Direction::Backward, sup)?;
        branch = [tape.value(bf).item(), tape.value(bb).item()];
        branch_vars = Some((bf, bb));
    }

    let fusion_in = match (frozen, cfg.use_branch) {
        (Some(values), true) => values.clone().map(|m| tape.constant(m)),
        (None, true) => h.map(|v| tape.detach(v)),
        (_, false) => h,
    };
    let out = model.fuse(tape, p, ops, fusion_in, mode, rng)?;
    let cls = heads.main_loss(tape, p, out.fused, sup, cfg.focal_gamma)?;
    let (l1, l2) = cfg.effective_weights(out.q.is_some());

    let mut imp_value = 0.0;
    let mut q_sums = None;
    let mut main = cls;
    if let Some(q) = out.q {
        let sums = tape.sum_rows(q);
        let s = tape.value(sums).as_slice();
        q_sums = Some([s[0], s[1]]);
        if l1 > 0.0 {
            let imp = tape.cv_squared(sums)?;
            imp_value = tape.value(imp).item();
            let weighted = tape.scale(imp, l1);
            main = tape.add(main, weighted)?;
        }
    }

    let total = match branch_vars {
        Some((bf, bb)) if l2 > 0.0 => {
            let bsum = tape.add(bf, bb)?;
            let b = tape.scale(bsum, l2 / 2.0);
            let m = tape.scale(main, 1.0 - l2);
            tape.add(m, b)?
        }
        _ => main,
    };

    let cls_value = tape.value(cls).item();
    let breakdown = LossBreakdown {
        cls: cls_value,
        imp: imp_value,
        branch_fwd: branch[0],
        branch_bwd: branch[1],
        total: tape.value(total).item(),
        imp_coef: l1,
        branch_coef: l2,
        q_sums,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss: {breakdown:?}")));
    }
    Ok(ObjectiveOutput {
        total,
        main,
        branch: branch_vars.map(|(f, b)| [f, b]),
        breakdown,
        fused: out.fused,
        q: out.q,
        encoders: [enc_f, enc_b],
    })
}
