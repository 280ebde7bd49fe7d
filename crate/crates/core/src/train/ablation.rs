use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabeledDataset;
use crate::model::{FusionMode, GateMode};

use super::{train_node, MeanStd, TrainConfig};

/// A model component that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// The cumax + reset gate; off means plain mean aggregation.
    Resgate,
    /// Gated fusion; off means per-direction linear layers summed.
    Fusion,
    /// Branch loss (and with it the stop-gradient).
    Branch,
    /// Importance loss.
    Imp,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Resgate, Component::Fusion, Component::Branch, Component::Imp];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Resgate => "resgate",
            Component::Fusion => "fusion",
            Component::Branch => "branch",
            Component::Imp => "imp",
        }
    }

    /// Applies "component off" to a config.
    pub fn disable(self, cfg: &mut TrainConfig) {
        match self {
            Component::Resgate => cfg.gate_mode = GateMode::Disabled,
            Component::Fusion => cfg.fusion_mode = FusionMode::Sum,
            Component::Branch => cfg.branch_loss = false,
            Component::Imp => cfg.importance_loss = false,
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation component '{s}' (expected resgate, fusion, branch, imp)")))
    }
}

/// Which variants to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ablation {
    pub off: Vec<Component>,
    /// Every subset of `off` instead of just the full model and everything off.
    pub grid: bool,
}

impl Ablation {
    pub fn parse(list: &str, grid: bool) -> Result<Self> {
        let mut off = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let c: Component = item.parse()?;
            if !off.contains(&c) {
                off.push(c);
            }
        }
        Ok(Ablation { off, grid })
    }

    /// The disabled-component sets, starting with the full model.
    pub fn variants(&self) -> Vec<Vec<Component>> {
        if self.grid {
            (0..1usize << self.off.len())
                .map(|mask| {
                    self.off
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, &c)| c)
                        .collect()
                })
                .collect()
        } else if self.off.is_empty() {
            vec![Vec::new()]
        } else {
            vec![Vec::new(), self.off.clone()]
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub off: Vec<Component>,
    pub test_acc: MeanStd,
    /// Mean test accuracy minus that of the full model.
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("off,test_acc_mean,test_acc_std,delta\n");
        for row in &self.rows {
            let off: Vec<&str> = row.off.iter().map(|c| c.as_str()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                if off.is_empty() { "none".to_string() } else { off.join("+") },
                row.test_acc.mean,
                row.test_acc.std,
                row.delta
            ));
        }
        out
    }
}

pub fn run_ablation(dataset: &LabeledDataset, cfg: &TrainConfig, ablation: &Ablation) -> Result<AblationReport> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for off in ablation.variants() {
        let mut c = cfg.clone();
        for comp in &off {
            comp.disable(&mut c);
        }
        let report = train_node(dataset, &c)?;
        let base = rows.first().map_or(report.test_acc.mean, |r| r.test_acc.mean);
        rows.push(AblationRow {
            off,
            test_acc: report.test_acc,
            delta: report.test_acc.mean - base,
        });
    }
    Ok(AblationReport { rows })
}
