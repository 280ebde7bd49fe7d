use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdjRows, FusionMode, GateMode, ModelConfig};
use crate::objective::ObjectiveConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

/// How link-prediction negatives are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkNegatives {
    /// Uniform directed non-edges (existence prediction).
    #[default]
    Uniform,
    /// Reversals `(v, u)` of positives when `(v, u)` is not an edge (direction prediction).
    Reversed,
}

fn default_true() -> bool {
    true
}

fn default_splits() -> usize {
    10
}

fn default_link_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_gate_mode() -> GateMode {
    GateMode::Resettable
}

fn default_fusion_mode() -> FusionMode {
    FusionMode::Gated
}

/// Flat training configuration, read from JSON with unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub layers: usize,
    pub gate_mlp_layers: usize,
    pub adj_mlp_layers: usize,
    pub input_fc_dropout: f64,
    pub dropout: f64,
    pub adj_coef: f64,
    pub imp_coef: f64,
    pub branch_coef: f64,
    pub task: Task,
    pub hidden: usize,
    pub chunk_size: usize,
    pub focal_gamma: f64,

    #[serde(default = "default_gate_mode")]
    pub gate_mode: GateMode,
    #[serde(default = "default_fusion_mode")]
    pub fusion_mode: FusionMode,
    #[serde(default)]
    pub adj_rows: AdjRows,
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default = "default_true")]
    pub branch_loss: bool,
    #[serde(default = "default_true")]
    pub importance_loss: bool,
    /// Train on the symmetrised graph.
    #[serde(default)]
    pub symmetrize: bool,
    /// Splits generated when the dataset ships none.
    #[serde(default = "default_splits")]
    pub num_splits: usize,
    #[serde(default)]
    pub link_negatives: LinkNegatives,
    #[serde(default = "default_link_split")]
    pub link_split: [f64; 3],
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.patience > self.epochs {
            return bad(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            ));
        }
        if self.num_splits == 0 {
            return bad("num_splits must be >= 1".into());
        }
        let total: f64 = self.link_split.iter().sum();
        if self.link_split.iter().any(|&r| !(r >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("link_split must be non-negative and sum to 1, got {:?}", self.link_split));
        }
        self.objective().validate()?;
        self.model(1, 1, 1).validate()
    }

    /// Network shape for a dataset with `n` nodes, `d` features and `out` outputs.
    pub fn model(&self, n: usize, d: usize, out: usize) -> ModelConfig {
        ModelConfig {
            num_nodes: n,
            in_features: d,
            out_dim: out,
            hidden: self.hidden,
            layers: self.layers,
            chunk_size: self.chunk_size,
            gate_mlp_layers: self.gate_mlp_layers,
            adj_mlp_layers: self.adj_mlp_layers,
            adj_coef: self.adj_coef,
            input_dropout: self.input_fc_dropout,
            dropout: self.dropout,
            noise: self.noise,
            gate_mode: self.gate_mode,
            fusion_mode: self.fusion_mode,
            adj_rows: self.adj_rows,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            imp_coef: self.imp_coef,
            branch_coef: self.branch_coef,
            focal_gamma: self.focal_gamma,
            use_branch: self.branch_loss,
            use_importance: self.importance_loss,
        }
    }

    /// Small, fast defaults for synthetic experiments.
    pub fn synthetic_default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 200,
            patience: 50,
            seed: 0,
            layers: 2,
            gate_mlp_layers: 2,
            adj_mlp_layers: 2,
            input_fc_dropout: 0.2,
            dropout: 0.2,
            adj_coef: 0.0,
            imp_coef: 1e-3,
            branch_coef: 0.8,
            task: Task::NodeClassification,
            hidden: 32,
            chunk_size: 4,
            focal_gamma: 2.0,
            gate_mode: GateMode::Resettable,
            fusion_mode: FusionMode::Gated,
            adj_rows: AdjRows::OwnDirection,
            noise: true,
            branch_loss: true,
            importance_loss: true,
            symmetrize: false,
            num_splits: 10,
            link_negatives: LinkNegatives::Uniform,
            link_split: default_link_split(),
        }
    }

    /// Per-dataset settings tuned for the benchmark graphs (hidden size and chunking are ours).
    pub fn preset(name: &str) -> Option<Self> {
        // (lr, wd, layers, gate_mlp, adj_mlp, input_fc dropout, dropout, beta, l1, l2)
        let row = match name {
            "chameleon" => (0.05, 1e-4, 12, 3, 4, 0.5, 0.3, 0.5, 1e-5, 0.95),
            "squirrel" => (0.01, 1e-4, 5, 2, 2, 0.5, 0.3, 0.5, 1e-7, 0.8),
            "cora_ml" => (0.001, 1e-6, 4, 2, 2, 0.5, 0.2, 0.0, 1e-3, 0.9),
            "citeseer_full" => (0.005, 5e-4, 14, 2, 2, 0.5, 0.0, 0.4, 1e-7, 0.95),
            "roman_empire" => (0.005, 5e-6, 6, 2, 4, 0.3, 0.1, 0.0, 1e-3, 0.05),
            _ => return None,
        };
        let (lr, weight_decay, layers, gate_mlp_layers, adj_mlp_layers, input_fc_dropout, dropout, adj_coef, imp_coef, branch_coef) =
            row;
        Some(TrainConfig {
            lr,
            weight_decay,
            epochs: 1000,
            patience: 200,
            layers,
            gate_mlp_layers,
            adj_mlp_layers,
            input_fc_dropout,
            dropout,
            adj_coef,
            imp_coef,
            branch_coef,
            hidden: 64,
            chunk_size: 4,
            ..Self::synthetic_default()
        })
    }

    pub const PRESETS: [&'static str; 5] = ["chameleon", "squirrel", "cora_ml", "citeseer_full", "roman_empire"];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = TrainConfig::preset("chameleon").unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), cfg);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = v.as_object_mut().unwrap();
        for key in ["gate_mode", "fusion_mode", "adj_rows", "noise", "num_splits", "link_split"] {
            obj.remove(key);
        }
        let parsed = TrainConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(parsed.gate_mode, GateMode::Resettable);
        assert_eq!(parsed.num_splits, 10);
        assert!(parsed.noise);
    }

    #[test]
    fn missing_and_unknown_keys_are_named() {
        let cfg = TrainConfig::synthetic_default();
        let mut v = serde_json::to_value(&cfg).unwrap();
        v.as_object_mut().unwrap().remove("imp_coef");
        let err = TrainConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("imp_coef"), "{err}");

        let mut v = serde_json::to_value(&cfg).unwrap();
        v.as_object_mut().unwrap().insert("momentum".into(), 0.9.into());
        let err = TrainConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("momentum"), "{err}");
    }

    #[test]
    fn invariants_enforced() {
        let mut cfg = TrainConfig::synthetic_default();
        cfg.patience = cfg.epochs + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::synthetic_default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::synthetic_default();
        cfg.branch_coef = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = TrainConfig::synthetic_default();
        cfg.input_fc_dropout = 1.0;
        assert!(cfg.validate().is_err());
        for name in TrainConfig::PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
    }
}
