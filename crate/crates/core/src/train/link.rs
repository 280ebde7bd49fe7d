use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::LabeledDataset;
use crate::model::{GraphOps, PassMode};
use crate::objective::{self, Supervision};
use crate::tensor::{Matrix, Tape};

use super::splits::make_link_split;
use super::{rng_for, AdamW, LinkSplit, Network, Task, TrainConfig};

/// Random initialisations averaged for the untrained baseline.
pub const UNTRAINED_DRAWS: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct LinkReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Test accuracy of freshly initialised networks, averaged over independent draws.
    pub untrained_test_acc: f64,
    /// Share of test positives `(u, v)` whose score differs from that of `(v, u)`.
    pub direction_sensitivity: f64,
    pub losses: Vec<f64>,
    #[serde(skip)]
    pub network: Option<Network>,
    #[serde(skip)]
    pub split: Option<LinkSplit>,
}

fn labelled(pos: &[(usize, usize)], neg: &[(usize, usize)]) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut pairs = pos.to_vec();
    pairs.extend_from_slice(neg);
    let mut labels = vec![1.0; pos.len()];
    labels.resize(pairs.len(), 0.0);
    (pairs, labels)
}

/// Existence probabilities for `pairs`.
pub fn link_scores(net: &Network, ops: &GraphOps, features: &Matrix, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let fused = net.infer(ops, features)?.fused;
    let mut tape = Tape::new();
    let p = net.params.bind_frozen(&mut tape);
    let h = tape.constant(fused);
    let src = Arc::new(pairs.iter().map(|e| e.0).collect());
    let dst = Arc::new(pairs.iter().map(|e| e.1).collect());
    let logits = net.heads.link_logits(&mut tape, &p, h, src, dst)?;
    Ok(tape.value(logits).as_slice().iter().map(|&z| crate::tensor::sigmoid(z)).collect())
}

/// Fraction of correct existence decisions at threshold 0.5.
pub fn link_accuracy(
    net: &Network,
    ops: &GraphOps,
    features: &Matrix,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<f64> {
    let (pairs, labels) = labelled(pos, neg);
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let scores = link_scores(net, ops, features, &pairs)?;
    let hits = scores
        .iter()
        .zip(&labels)
        .filter(|(&s, &y)| (s > 0.5) == (y == 1.0))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Trains a link-existence model on a held-out edge split of `dataset.graph`.
pub fn train_link(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<LinkReport> {
    cfg.validate()?;
    if cfg.task != Task::LinkPrediction {
        return Err(Error::Config("train_link needs task link_prediction".into()));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let graph = if cfg.symmetrize { dataset.graph.symmetrize() } else { dataset.graph.clone() };
    let split = make_link_split(&graph, cfg.link_split, cfg.link_negatives, &mut rng)?;
    let ops = GraphOps::new(split.graph());
    let x = &dataset.features;
    let mut net = Network::for_task(cfg, dataset.num_nodes(), dataset.num_features(), dataset.num_classes.max(1), &mut rng)?;
    let mut untrained_test_acc = 0.0;
    let mut init_rng = rng_for(cfg.seed, 1);
    for _ in 0..UNTRAINED_DRAWS {
        let fresh = Network::for_task(cfg, dataset.num_nodes(), dataset.num_features(), dataset.num_classes.max(1), &mut init_rng)?;
        untrained_test_acc += link_accuracy(&fresh, &ops, x, &split.test_pos, &split.test_neg)? / UNTRAINED_DRAWS as f64;
    }

    let (pairs, labels) = labelled(&split.train_pos, &split.train_neg);
    let sup = Supervision::pairs(&pairs, &labels);
    let obj = cfg.objective();
    let mut opt = AdamW::new(&net.params, cfg.lr, cfg.weight_decay);
    let mut best = (f64::NEG_INFINITY, 0usize, net.params.clone());
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = objective::evaluate(
            &net.model, &net.heads, &mut tape, &p, &ops, xv, &sup, &obj, PassMode::TRAIN, None, &mut rng,
        )?;
        tape.backward(out.total)?;
        let grads = p.grads(&tape, &net.params);
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}")));
        }
        opt.step(&mut net.params, &grads);
        losses.push(out.breakdown.total);

        let val_acc = link_accuracy(&net, &ops, x, &split.val_pos, &split.val_neg)?;
        let val_acc = if val_acc.is_nan() { 0.0 } else { val_acc };
        if val_acc > best.0 {
            best = (val_acc, epoch, net.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best;
    net.params = params;

    let reversed: Vec<(usize, usize)> = split.test_pos.iter().map(|&(u, v)| (v, u)).collect();
    let forward = link_scores(&net, &ops, x, &split.test_pos)?;
    let backward = link_scores(&net, &ops, x, &reversed)?;
    let differing = forward.iter().zip(&backward).filter(|(a, b)| a != b).count();
    Ok(LinkReport {
        best_epoch,
        epochs_run: losses.len(),
        train_acc: link_accuracy(&net, &ops, x, &split.train_pos, &split.train_neg)?,
        val_acc: link_accuracy(&net, &ops, x, &split.val_pos, &split.val_neg)?,
        test_acc: link_accuracy(&net, &ops, x, &split.test_pos, &split.test_neg)?,
        untrained_test_acc,
        direction_sensitivity: differing as f64 / forward.len().max(1) as f64,
        losses,
        network: Some(net),
        split: Some(split),
    })
}
