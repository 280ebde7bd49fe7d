//! Initialisation, optimisation, splits, synthetic data, and the training
//! and evaluation loops for node classification and link prediction.

mod ablation;
mod config;
mod gradcheck;
mod link;
mod node;
mod optim;
mod splits;
mod synth;

pub use ablation::{run_ablation, Ablation, AblationReport, AblationRow, Component};
pub use config::{LinkNegatives, Task, TrainConfig};
pub use gradcheck::{model_gradcheck, random_instance, GradcheckOptions, ModelGradcheckReport};
pub use link::{link_accuracy, link_scores, train_link, LinkReport};
pub use node::{accuracy, evaluate_accuracy, train_node, train_node_split, EpochRecord, NodeReport, SplitOutcome};
pub use optim::{AdamW, OptState};
pub use splits::{make_link_split, make_node_splits, LinkSplit, NodeSplits, NODE_SPLIT_RATIOS};
pub use synth::{corrected_probabilities, synth_directed_homophily, SynthParams, SyntheticGraph};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Direction;
use crate::model::{Dhgnn, GateTrace, GraphOps, ModelConfig, ParamSet, PassMode};
use crate::objective::Heads;
use crate::tensor::{Matrix, Tape};

/// Deterministic generator for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A network, its task heads, and their parameter values.
#[derive(Debug, Clone)]
pub struct Network {
    pub model: Dhgnn,
    pub heads: Heads,
    pub params: ParamSet,
    pub task: Task,
}

/// Outputs of a deterministic inference pass.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Class logits (node task) or fused node embeddings (link task).
    pub fused: Matrix,
    pub q: Option<Matrix>,
    pub embeddings: [Matrix; 2],
    pub traces: [GateTrace; 2],
}

impl Network {
    /// Registers and initialises every parameter: Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, task: Task, classes: usize, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let hidden = config.hidden;
        let out = config.out_dim;
        let model = Dhgnn::new(config, &mut params, rng)?;
        let heads = match task {
            Task::NodeClassification => Heads::node(&mut params, hidden, classes, rng),
            Task::LinkPrediction => Heads::link(&mut params, hidden, out, rng),
        };
        Ok(Network {
            model,
            heads,
            params,
            task,
        })
    }

    /// Network for a dataset under a training config.
    pub fn for_task<R: Rng + ?Sized>(
        cfg: &TrainConfig,
        num_nodes: usize,
        num_features: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let out = match cfg.task {
            Task::NodeClassification => classes,
            Task::LinkPrediction => cfg.hidden,
        };
        Self::init(cfg.model(num_nodes, num_features, out), cfg.task, classes, rng)
    }

    /// Evaluation-mode forward pass (no dropout, no noise).
    pub fn infer(&self, ops: &GraphOps, features: &Matrix) -> Result<Inference> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(features.clone());
        // Evaluation draws no random numbers; the generator only satisfies the signature.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.model.encode(&mut tape, &p, ops, x, Direction::Forward, PassMode::EVAL, &mut rng)?;
        let b = self.model.encode(&mut tape, &p, ops, x, Direction::Backward, PassMode::EVAL, &mut rng)?;
        let h = [f.embeddings, b.embeddings];
        let out = self.model.fuse(&mut tape, &p, ops, h, PassMode::EVAL, &mut rng)?;
        Ok(Inference {
            fused: tape.value(out.fused).clone(),
            q: out.q.map(|q| tape.value(q).clone()),
            embeddings: h.map(|v| tape.value(v).clone()),
            traces: [f.trace, b.trace],
        })
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        MeanStd { mean, std: var.sqrt() }
    }
}
