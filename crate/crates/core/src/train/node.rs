use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{LabeledDataset, MaskKind, Split};
use crate::model::{GraphOps, PassMode};
use crate::objective::{self, LossBreakdown, Supervision};
use crate::tensor::{Matrix, Tape};

use super::splits::{make_node_splits, NODE_SPLIT_RATIOS};
use super::{rng_for, AdamW, MeanStd, Network, Task, TrainConfig};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub split: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Result of training on one split, measured at the best-validation epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitOutcome {
    pub split: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub splits: Vec<SplitOutcome>,
    pub train_acc: MeanStd,
    pub val_acc: MeanStd,
    pub test_acc: MeanStd,
    #[serde(skip)]
    pub networks: Vec<Network>,
}

/// Fraction of `nodes` whose argmax logit equals the label; `NaN` for an empty mask.
pub fn accuracy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return f64::NAN;
    }
    let pred = logits.argmax_rows();
    let hits = nodes.iter().filter(|&&v| pred[v] == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

/// Accuracy of `net` on one mask of `split`, with dropout and noise off.
pub fn evaluate_accuracy(
    net: &Network,
    ops: &GraphOps,
    dataset: &LabeledDataset,
    split: &Split,
    kind: MaskKind,
) -> Result<f64> {
    let inf = net.infer(ops, &dataset.features)?;
    Ok(accuracy(&inf.fused, &dataset.labels, split.nodes(kind)))
}

fn training_graph_ops(dataset: &LabeledDataset, cfg: &TrainConfig) -> GraphOps {
    if cfg.symmetrize {
        GraphOps::new(&dataset.graph.symmetrize())
    } else {
        GraphOps::new(&dataset.graph)
    }
}

/// Trains on split `index` of `dataset.splits` with early stopping on validation accuracy.
pub fn train_node_split(dataset: &LabeledDataset, index: usize, cfg: &TrainConfig) -> Result<(Network, SplitOutcome)> {
    cfg.validate()?;
    if cfg.task != Task::NodeClassification {
        return Err(Error::Config("train_node_split needs task node_classification".into()));
    }
    let split = dataset
        .splits
        .get(index)
        .ok_or_else(|| Error::Config(format!("dataset has no split {index}")))?;
    if split.train.is_empty() {
        return Err(Error::Contract(format!("split {index} has an empty training mask")));
    }
    let ops = training_graph_ops(dataset, cfg);
    let mut rng = rng_for(cfg.seed, index as u64);
    let mut net = Network::for_task(cfg, dataset.num_nodes(), dataset.num_features(), dataset.num_classes, &mut rng)?;
    let mut opt = AdamW::new(&net.params, cfg.lr, cfg.weight_decay);
    let sup = Supervision::nodes(&split.train, &dataset.labels);
    let obj = cfg.objective();

    let mut best = (f64::NEG_INFINITY, 0usize, net.params.clone());
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape);
        let x = tape.constant(dataset.features.clone());
        let out = objective::evaluate(
            &net.model, &net.heads, &mut tape, &p, &ops, x, &sup, &obj, PassMode::TRAIN, None, &mut rng,
        )?;
        tape.backward(out.total)?;
        let grads = p.grads(&tape, &net.params);
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch} (split {index})")));
        }
        opt.step(&mut net.params, &grads);

        let logits = net.infer(&ops, &dataset.features)?.fused;
        let train_acc = accuracy(&logits, &dataset.labels, &split.train);
        let val_acc = if split.val.is_empty() { train_acc } else { accuracy(&logits, &dataset.labels, &split.val) };
        history.push(EpochRecord {
            split: index,
            epoch,
            loss: out.breakdown,
            train_acc,
            val_acc,
        });
        if val_acc > best.0 {
            best = (val_acc, epoch, net.params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }

    let (_, best_epoch, params) = best;
    net.params = params;
    let logits = net.infer(&ops, &dataset.features)?.fused;
    let train_acc = accuracy(&logits, &dataset.labels, &split.train);
    let outcome = SplitOutcome {
        split: index,
        best_epoch,
        epochs_run: history.len(),
        train_acc,
        val_acc: if split.val.is_empty() { train_acc } else { accuracy(&logits, &dataset.labels, &split.val) },
        test_acc: accuracy(&logits, &dataset.labels, &split.test),
        history,
    };
    Ok((net, outcome))
}

/// Trains every split in parallel. Datasets without splits get `cfg.num_splits`
/// stratified 48/32/20 splits drawn from the config seed.
pub fn train_node(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<NodeReport> {
    cfg.validate()?;
    let owned;
    let dataset = if dataset.splits.is_empty() {
        let mut rng = rng_for(cfg.seed, u64::MAX);
        let splits = make_node_splits(&dataset.labels, cfg.num_splits, NODE_SPLIT_RATIOS, &mut rng)?.splits;
        owned = LabeledDataset {
            splits,
            ..dataset.clone()
        };
        &owned
    } else {
        dataset
    };
    let results: Vec<(Network, SplitOutcome)> = (0..dataset.splits.len())
        .into_par_iter()
        .map(|i| train_node_split(dataset, i, cfg))
        .collect::<Result<_>>()?;
    let (networks, splits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let stat = |f: fn(&SplitOutcome) -> f64| MeanStd::of(&splits.iter().map(f).collect::<Vec<_>>());
    Ok(NodeReport {
        train_acc: stat(|s| s.train_acc),
        val_acc: stat(|s| s.val_acc),
        test_acc: stat(|s| s.test_acc),
        splits,
        networks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_mask_only() {
        let logits = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(accuracy(&logits, &[0, 1, 1], &[0, 1]), 1.0);
        assert_eq!(accuracy(&logits, &[0, 1, 1], &[0, 1, 2]), 2.0 / 3.0);
        assert!(accuracy(&logits, &[0, 1, 1], &[]).is_nan());
    }
}
