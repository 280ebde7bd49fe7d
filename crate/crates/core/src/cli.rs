//! The `dhgnn` command-line interface.
//!
//! Every command prints a JSON report on stdout and exits 0. Failures print a
//! single JSON line on stderr and exit 1 (verification), 2 (input), or
//! 3 (numerical).

use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{self, io, DirectedGraph, Direction, LabeledDataset, MaskKind};
use crate::model::GraphOps;
use crate::tensor::Matrix;
use crate::train::{
    self, model_gradcheck, rng_for, run_ablation, synth_directed_homophily, train_link, train_node, Ablation,
    GradcheckOptions, SynthParams, Task, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "dhgnn", version, about = "Directed homophily-aware GNN: training, evaluation, and graph diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Homophily per hop and direction, edge homophily, and class connection matrices.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_hops: usize,
        /// JSON report path; a CSV of the hop curves is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train node classification (or link prediction, per the config's task) on every split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint on one mask of one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
        #[arg(long, value_enum, default_value_t = MaskArg::Test)]
        mask: MaskArg,
    },
    /// Train and evaluate link existence prediction.
    Linkpred {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer chunked gate values of both encoders as CSV.
    GateDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameter gradient on a random instance.
    Gradcheck {
        #[arg(long, default_value_t = 12)]
        size: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the backward rule of the named op (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Generate a synthetic dataset with distinct forward/backward homophily.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        fwd_hom: f64,
        #[arg(long)]
        bwd_hom: f64,
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain with components switched off and report accuracy deltas.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of resgate,fusion,branch,imp.
        #[arg(long)]
        off: String,
        /// Run every subset of --off.
        #[arg(long)]
        grid: bool,
        /// Optional CSV table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskArg {
    Train,
    Val,
    Test,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Train => MaskKind::Train,
            MaskArg::Val => MaskKind::Val,
            MaskArg::Test => MaskKind::Test,
        }
    }
}

/// Parses `args` (including the program name), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first, "exit_code": 2}));
            return 2;
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            // A closed stdout (e.g. piping into `head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{report}");
            0
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string(), "exit_code": code}));
            code
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("reports serialise")
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

fn matrix_json(m: &Matrix) -> Value {
    json!((0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>())
}

/// Runs one command and returns its stdout report.
pub fn execute(cmd: &Command) -> Result<Value> {
    match cmd {
        Command::Analyze { data, max_hops, out } => analyze(data, *max_hops, out),
        Command::Train { data, config, out } => {
            let cfg = TrainConfig::load(config)?;
            let ds = io::load_dataset(data)?;
            match cfg.task {
                Task::NodeClassification => train_cmd(&ds, &cfg, out),
                Task::LinkPrediction => linkpred_cmd(&ds, &cfg, out),
            }
        }
        Command::Linkpred { data, config, out } => {
            let mut cfg = TrainConfig::load(config)?;
            cfg.task = Task::LinkPrediction;
            linkpred_cmd(&io::load_dataset(data)?, &cfg, out)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            mask,
        } => eval_cmd(checkpoint, data, *split, (*mask).into()),
        Command::GateDump {
            checkpoint,
            data,
            layers,
            out,
        } => gate_dump(checkpoint, data, *layers, out),
        Command::Gradcheck {
            size,
            tol,
            seed,
            inject_fault,
        } => {
            if *size < 2 {
                return Err(Error::Config("--size must be at least 2".into()));
            }
            if !(*tol > 0.0) {
                return Err(Error::Config("--tol must be positive".into()));
            }
            let opts = GradcheckOptions {
                size: *size,
                tol: *tol,
                seed: *seed,
                fault: inject_fault.clone().map(|s| &*Box::leak(s.into_boxed_str())),
                ..GradcheckOptions::default()
            };
            let report = model_gradcheck(&opts)?;
            if !report.passed {
                return Err(Error::Verification(format!(
                    "max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}); stop_gradient_exact={}, branch_isolation_exact={}, uncovered={:?}",
                    report.max_error,
                    report.worst_param,
                    report.worst_index,
                    report.worst_analytic,
                    report.worst_numeric,
                    report.stop_gradient_exact,
                    report.branch_isolation_exact,
                    report.uncovered
                )));
            }
            Ok(to_json(&report))
        }
        Command::Synth {
            n,
            classes,
            fwd_hom,
            bwd_hom,
            degree,
            noise,
            seed,
            out,
        } => {
            let params = SynthParams::new(*n, *classes, *fwd_hom, *bwd_hom, *degree, *noise);
            let s = synth_directed_homophily(&params, &mut rng_for(*seed, 0))?;
            io::save_dataset(&s.dataset, out)?;
            Ok(json!({
                "out": out,
                "nodes": s.dataset.num_nodes(),
                "edges": s.dataset.graph.num_edges(),
                "hubs": s.hubs,
                "splits": s.dataset.splits.len(),
            }))
        }
        Command::Ablate {
            data,
            config,
            off,
            grid,
            out,
        } => {
            let ablation = Ablation::parse(off, *grid)?;
            let cfg = TrainConfig::load(config)?;
            let ds = io::load_dataset(data)?;
            let report = run_ablation(&ds, &cfg, &ablation)?;
            if let Some(path) = out {
                write_file(path, report.to_csv())?;
            }
            Ok(to_json(&report))
        }
    }
}

/// Diagnostics report shared by the CLI and the bindings.
pub fn analysis_report(ds: &LabeledDataset, max_hops: usize) -> Result<Value> {
    if max_hops == 0 {
        return Err(Error::Config("--max-hops must be at least 1".into()));
    }
    let g = &ds.graph;
    let c = ds.num_classes;
    let curves = Direction::BOTH.map(|d| graph::avg_homophily_curve(g, &ds.labels, max_hops, d));
    let sym = g.symmetrize();
    Ok(json!({
        "nodes": g.num_nodes(),
        "edges": g.num_edges(),
        "classes": c,
        "edge_homophily": graph::edge_homophily(g, &ds.labels),
        "hop_homophily": {
            "forward": to_json(&curves[0].hops),
            "backward": to_json(&curves[1].hops),
        },
        "class_connection": {
            "raw": matrix_json(&graph::class_connection_matrix(g, &ds.labels, c, false)),
            "normalized": matrix_json(&graph::class_connection_matrix(g, &ds.labels, c, true)),
        },
        "symmetrized_class_connection": {
            "raw": matrix_json(&graph::class_connection_matrix(&sym, &ds.labels, c, false)),
            "normalized": matrix_json(&graph::class_connection_matrix(&sym, &ds.labels, c, true)),
        },
    }))
}

fn analyze(data: &Path, max_hops: usize, out: &Path) -> Result<Value> {
    let ds = io::load_dataset(data)?;
    let report = analysis_report(&ds, max_hops)?;
    write_file(out, pretty(&report))?;
    let mut csv = String::from("hop,direction,mean,count\n");
    for dir in Direction::BOTH {
        let curve = graph::avg_homophily_curve(&ds.graph, &ds.labels, max_hops, dir);
        for h in &curve.hops {
            let mean = h.mean.map_or(String::new(), |m| m.to_string());
            writeln!(csv, "{},{},{},{}", h.hop, dir.as_str(), mean, h.count).expect("string write");
        }
    }
    write_file(&out.with_extension("csv"), csv)?;
    Ok(report)
}

fn train_cmd(ds: &LabeledDataset, cfg: &TrainConfig, out: &Path) -> Result<Value> {
    let report = train_node(ds, cfg)?;
    for (s, net) in report.splits.iter().zip(&report.networks) {
        let mut log = String::new();
        for rec in &s.history {
            log.push_str(&serde_json::to_string(rec).expect("records serialise"));
            log.push('\n');
        }
        write_file(&out.join(format!("split_{}.jsonl", s.split)), log)?;
        let path = out.join(format!("split_{}.ckpt", s.split));
        fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
        Checkpoint::from_trained(net, cfg.symmetrize).save(&path)?;
    }
    let summary = json!({
        "task": "node_classification",
        "splits": to_json(&report.splits),
        "train_acc": to_json(&report.train_acc),
        "val_acc": to_json(&report.val_acc),
        "test_acc": to_json(&report.test_acc),
    });
    write_file(&out.join("summary.json"), pretty(&summary))?;
    Ok(summary)
}

fn linkpred_cmd(ds: &LabeledDataset, cfg: &TrainConfig, out: &Path) -> Result<Value> {
    let report = train_link(ds, cfg)?;
    let mut losses = String::new();
    for (epoch, loss) in report.losses.iter().enumerate() {
        losses.push_str(&json!({"epoch": epoch, "total": loss}).to_string());
        losses.push('\n');
    }
    write_file(&out.join("link.jsonl"), losses)?;
    if let Some(net) = &report.network {
        Checkpoint::from_trained(net, cfg.symmetrize).save(&out.join("link.ckpt"))?;
    }
    let mut summary = to_json(&report);
    if let Value::Object(map) = &mut summary {
        map.remove("losses");
        map.insert("task".into(), json!("link_prediction"));
    }
    write_file(&out.join("summary.json"), pretty(&summary))?;
    Ok(summary)
}

/// Dataset graph as seen by a checkpointed model.
fn graph_for(ck: &Checkpoint, ds: &LabeledDataset) -> DirectedGraph {
    if ck.symmetrized() {
        ds.graph.symmetrize()
    } else {
        ds.graph.clone()
    }
}

fn load_matching(checkpoint: &Path, data: &Path) -> Result<(train::Network, LabeledDataset, Checkpoint)> {
    let ck = Checkpoint::load(checkpoint)?;
    let net = ck.to_network()?;
    let ds = io::load_dataset(data)?;
    let c = net.model.config();
    if c.num_nodes != ds.num_nodes() || c.in_features != ds.num_features() {
        return Err(Error::dim(
            "checkpoint",
            format!(
                "checkpoint expects {} nodes x {} features, dataset has {} x {}",
                c.num_nodes,
                c.in_features,
                ds.num_nodes(),
                ds.num_features()
            ),
        ));
    }
    Ok((net, ds, ck))
}

fn eval_cmd(checkpoint: &Path, data: &Path, split: usize, mask: MaskKind) -> Result<Value> {
    let (net, ds, ck) = load_matching(checkpoint, data)?;
    if net.task != Task::NodeClassification {
        return Err(Error::Config("eval supports node classification checkpoints".into()));
    }
    let s = ds
        .splits
        .get(split)
        .ok_or_else(|| Error::Config(format!("dataset has no split {split}")))?;
    let ops = GraphOps::new(&graph_for(&ck, &ds));
    let acc = train::evaluate_accuracy(&net, &ops, &ds, s, mask)?;
    Ok(json!({"split": split, "mask": mask, "nodes": s.nodes(mask).len(), "accuracy": acc}))
}

/// CSV rows `layer,direction,node,chunk_index,gate_value` for the first `layers` layers (1-based).
pub fn gate_csv(traces: &[crate::model::GateTrace; 2], layers: usize) -> String {
    let mut csv = String::from("layer,direction,node,chunk_index,gate_value\n");
    for l in 0..layers {
        for dir in Direction::BOTH {
            let gates = &traces[dir.index()].gates[l];
            for v in 0..gates.rows() {
                for (c, g) in gates.row(v).iter().enumerate() {
                    writeln!(csv, "{},{},{v},{c},{g}", l + 1, dir.as_str()).expect("string write");
                }
            }
        }
    }
    csv
}

fn gate_dump(checkpoint: &Path, data: &Path, layers: usize, out: &Path) -> Result<Value> {
    let (net, ds, ck) = load_matching(checkpoint, data)?;
    let c = net.model.config();
    if c.gate_mode == crate::model::GateMode::Disabled {
        return Err(Error::Config("checkpoint has no gates (gating disabled)".into()));
    }
    if layers == 0 || layers > c.layers {
        return Err(Error::Config(format!("--layers must be in 1..={}, got {layers}", c.layers)));
    }
    let ops = GraphOps::new(&graph_for(&ck, &ds));
    let inf = net.infer(&ops, &ds.features)?;
    write_file(out, gate_csv(&inf.traces, layers))?;
    let means: Vec<Value> = (0..layers)
        .map(|l| {
            let m = Direction::BOTH.map(|d| inf.traces[d.index()].gates[l].mean());
            json!({"layer": l + 1, "forward_mean": m[0], "backward_mean": m[1]})
        })
        .collect();
    Ok(json!({
        "out": out,
        "rows": layers * ds.num_nodes() * c.gate_width() * 2,
        "layers": means,
    }))
}
