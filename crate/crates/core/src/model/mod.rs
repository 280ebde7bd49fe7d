//! The DHGNN network: one gated message-passing encoder per edge direction
//! and a structure-aware, noise-tolerant fusion block.
//!
//! Encoder layer `l` for node `v` (chunked gate width `g = hidden / chunk_size`):
//!
//! ```text
//! m    = mean of h_prev over v's neighbours in this direction (zero if none)
//! ghat = cumax(W_l [h_prev || m] + b_l)                  in (0, 1]^g, non-increasing
//! r    = sigmoid(ResetMlp(ghat W_r + g_prev U_r + b_r))  in (0, 1)^g
//! gt   = (1 - r) g_prev + r ghat
//! h    = G h_prev + (1 - G) m                            G = gt repeated chunk_size times
//! ```
//!
//! Fusion scores each direction with `NTB(x) = x W1 + eps * softplus(x W2)` on
//! `x = h + beta * AdjMlp(a_v)`, normalises the two scores with a softmax into
//! `q`, and applies a linear output layer to `q_fwd h_fwd + q_bwd h_bwd`.

mod params;

pub use params::{glorot_bound, BoundParams, ParamGroup, ParamId, ParamSet};

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, Direction};
use crate::tensor::{Matrix, SparseOp, SparseRows, Tape, Var};

/// How an encoder layer blends its previous embedding with the neighbourhood message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// cumax gate with the resettable (GRU-style) update.
    Resettable,
    /// cumax gate used directly each layer (`gt = ghat`), no reset memory.
    Plain,
    /// No gate: `h = m`, plain mean aggregation.
    Disabled,
}

/// How the two directional embeddings are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Noise-tolerant, structure-aware softmax gating.
    Gated,
    /// Per-direction linear layer, outputs summed.
    Sum,
}

/// Which adjacency rows feed each direction's structural embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjRows {
    /// Forward uses rows of `A` (out-neighbours), backward rows of `A^T`.
    #[default]
    OwnDirection,
    /// Both directions use rows of `A`.
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_nodes: usize,
    pub in_features: usize,
    pub out_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub chunk_size: usize,
    pub gate_mlp_layers: usize,
    pub adj_mlp_layers: usize,
    pub adj_coef: f64,
    pub input_dropout: f64,
    pub dropout: f64,
    pub noise: bool,
    pub gate_mode: GateMode,
    pub fusion_mode: FusionMode,
    pub adj_rows: AdjRows,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers < 1 {
            return bad("layers must be >= 1".into());
        }
        if self.chunk_size < 1 || self.hidden < self.chunk_size {
            return bad(format!(
                "need hidden >= chunk_size >= 1 (hidden {}, chunk_size {})",
                self.hidden, self.chunk_size
            ));
        }
        if !self.hidden.is_multiple_of(self.chunk_size) {
            return bad(format!(
                "hidden {} not divisible by chunk_size {}",
                self.hidden, self.chunk_size
            ));
        }
        if self.gate_mlp_layers < 1 || self.adj_mlp_layers < 1 {
            return bad("gate_mlp_layers and adj_mlp_layers must be >= 1".into());
        }
        if !(self.adj_coef >= 0.0) {
            return bad(format!("adj_coef must be >= 0, got {}", self.adj_coef));
        }
        for (name, p) in [("input_fc_dropout", self.input_dropout), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.num_nodes == 0 || self.in_features == 0 || self.out_dim == 0 {
            return bad("num_nodes, in_features and out_dim must be positive".into());
        }
        Ok(())
    }

    /// Width of the chunked gate vectors.
    pub fn gate_width(&self) -> usize {
        self.hidden / self.chunk_size
    }
}

/// Sparse operators derived from one graph, shared by every forward pass over it.
#[derive(Debug, Clone)]
pub struct GraphOps {
    mean: [Arc<SparseOp>; 2],
    adjacency: [Arc<SparseOp>; 2],
    num_nodes: usize,
}

impl GraphOps {
    pub fn new(g: &DirectedGraph) -> Self {
        let mk = |s: SparseRows| Arc::new(SparseOp::new(s));
        GraphOps {
            mean: Direction::BOTH.map(|d| mk(SparseRows::mean_aggregator(g, d))),
            adjacency: Direction::BOTH.map(|d| mk(SparseRows::adjacency(g, d))),
            num_nodes: g.num_nodes(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn mean_aggregator(&self, dir: Direction) -> Arc<SparseOp> {
        self.mean[dir.index()].clone()
    }

    pub fn adjacency(&self, dir: Direction) -> Arc<SparseOp> {
        self.adjacency[dir.index()].clone()
    }
}

/// Runtime switches for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassMode {
    /// Enables dropout and (if configured) fusion noise.
    pub training: bool,
}

impl PassMode {
    pub const TRAIN: PassMode = PassMode { training: true };
    pub const EVAL: PassMode = PassMode { training: false };
}

/// Per-layer chunked gate values of one encoder pass (`layers` matrices of `n x g`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateTrace {
    /// cumax output of each layer.
    pub preliminary: Vec<Matrix>,
    /// Gate actually applied at each layer.
    pub gates: Vec<Matrix>,
}

impl GateTrace {
    /// Gate entering layer `l` (the initial all-zero gate for `l = 0`).
    pub fn previous(&self, l: usize) -> Matrix {
        if l == 0 {
            let g = &self.gates[0];
            Matrix::zeros(g.rows(), g.cols())
        } else {
            self.gates[l - 1].clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub embeddings: Var,
    pub trace: GateTrace,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub fused: Var,
    /// `n x 2` decision scores, columns `[forward, backward]`; `None` for sum fusion.
    pub q: Option<Var>,
}

/// Affine layer `x W + b` over registered parameters.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: params.add_weight(format!("{name}.w"), group, fan_in, fan_out, rng),
            b: params.add_bias(format!("{name}.b"), group, fan_out),
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, p.var(self.w))?;
        tape.add_row(xw, p.var(self.b))
    }
}

#[derive(Debug, Clone)]
struct ResetMlp {
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    hidden: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct Encoder {
    dir: Direction,
    input: Linear,
    gates: Vec<Linear>,
    reset: Option<ResetMlp>,
}

#[derive(Debug, Clone)]
enum Fusion {
    Gated {
        w1: [ParamId; 2],
        w2: [ParamId; 2],
        adj_first: Linear,
        adj_rest: Vec<Linear>,
        out: Linear,
    },
    Sum {
        out: [Linear; 2],
    },
}

/// Parameter layout and forward computation of the dual-encoder network.
#[derive(Debug, Clone)]
pub struct Dhgnn {
    config: ModelConfig,
    encoders: [Encoder; 2],
    fusion: Fusion,
}

impl Dhgnn {
    /// Registers all parameters in `params` (Glorot weights, zero biases).
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let p = config.hidden;
        let g = config.gate_width();
        let encoders = Direction::BOTH.map(|dir| {
            let group = ParamGroup::Encoder(dir);
            let name = dir.as_str();
            let input = Linear::new(params, &format!("{name}.input"), group, config.in_features, p, rng);
            let (gates, reset) = match config.gate_mode {
                GateMode::Disabled => (Vec::new(), None),
                mode => {
                    let gates = (0..config.layers)
                        .map(|l| Linear::new(params, &format!("{name}.gate{l}"), group, 2 * p, g, rng))
                        .collect();
                    let reset = (mode == GateMode::Resettable).then(|| ResetMlp {
                        w_r: params.add_weight(format!("{name}.reset.w_r"), group, g, g, rng),
                        u_r: params.add_weight(format!("{name}.reset.u_r"), group, g, g, rng),
                        b_r: params.add_bias(format!("{name}.reset.b_r"), group, g),
                        hidden: (1..config.gate_mlp_layers)
                            .map(|k| Linear::new(params, &format!("{name}.reset.mlp{k}"), group, g, g, rng))
                            .collect(),
                    });
                    (gates, reset)
                }
            };
            Encoder {
                dir,
                input,
                gates,
                reset,
            }
        });

        let fg = ParamGroup::Fusion;
        let fusion = match config.fusion_mode {
            FusionMode::Gated => Fusion::Gated {
                w1: Direction::BOTH
                    .map(|d| params.add_weight(format!("fusion.{}.w1", d.as_str()), fg, p, 1, rng)),
                w2: Direction::BOTH
                    .map(|d| params.add_weight(format!("fusion.{}.w2", d.as_str()), fg, p, 1, rng)),
                adj_first: Linear::new(params, "fusion.adj0", fg, config.num_nodes, p, rng),
                adj_rest: (1..config.adj_mlp_layers)
                    .map(|k| Linear::new(params, &format!("fusion.adj{k}"), fg, p, p, rng))
                    .collect(),
                out: Linear::new(params, "fusion.out", fg, p, config.out_dim, rng),
            },
            FusionMode::Sum => Fusion::Sum {
                out: Direction::BOTH.map(|d| {
                    Linear::new(params, &format!("fusion.{}.out", d.as_str()), fg, p, config.out_dim, rng)
                }),
            },
        };

        Ok(Dhgnn {
            config,
            encoders,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Runs one directional encoder over all nodes.
    ///
    /// `features` is the raw `n x d` input; input dropout and the `d -> hidden`
    /// projection happen here.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ops: &GraphOps,
        features: Var,
        dir: Direction,
        mode: PassMode,
        rng: &mut R,
    ) -> Result<EncoderOutput> {
        self.check_graph(ops)?;
        let cfg = &self.config;
        let enc = &self.encoders[dir.index()];
        debug_assert_eq!(enc.dir, dir);
        let n = ops.num_nodes();

        let x = tape.dropout(features, cfg.input_dropout, mode.training, rng)?;
        let mut h = enc.input.apply(tape, p, x)?;
        let mut g_prev = tape.constant(Matrix::zeros(n, cfg.gate_width()));
        let mut trace = GateTrace::default();
        let agg = ops.mean_aggregator(dir);

        for l in 0..cfg.layers {
            let m = tape.sparse(agg.clone(), h)?;
            h = if cfg.gate_mode == GateMode::Disabled {
                m
            } else {
                let hm = tape.concat_cols(h, m)?;
                let logits = enc.gates[l].apply(tape, p, hm)?;
                let ghat = tape.cumax(logits);
                let gate = match &enc.reset {
                    Some(reset) => {
                        let r = self.reset_gate(tape, p, reset, ghat, g_prev)?;
                        tape.lerp(g_prev, ghat, r)?
                    }
                    None => ghat,
                };
                trace.preliminary.push(tape.value(ghat).clone());
                trace.gates.push(tape.value(gate).clone());
                g_prev = gate;
                let expanded = tape.repeat_cols(gate, cfg.chunk_size);
                tape.lerp(m, h, expanded)?
            };
            h = tape.dropout(h, cfg.dropout, mode.training, rng)?;
        }
        Ok(EncoderOutput { embeddings: h, trace })
    }

    /// `r = sigmoid(mlp(ghat W_r + g_prev U_r + b_r))`.
    fn reset_gate(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        reset: &ResetMlp,
        ghat: Var,
        g_prev: Var,
    ) -> Result<Var> {
        let a = tape.matmul(ghat, p.var(reset.w_r))?;
        let b = tape.matmul(g_prev, p.var(reset.u_r))?;
        let ab = tape.add(a, b)?;
        let mut z = tape.add_row(ab, p.var(reset.b_r))?;
        for layer in &reset.hidden {
            let act = tape.relu(z);
            z = layer.apply(tape, p, act)?;
        }
        Ok(tape.sigmoid(z))
    }

    /// Structural embedding `AdjMlp(a_v)` for every node, using `dir`'s adjacency rows.
    pub fn adjacency_embedding(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ops: &GraphOps,
        dir: Direction,
    ) -> Result<Option<Var>> {
        let Fusion::Gated { adj_first, adj_rest, .. } = &self.fusion else {
            return Ok(None);
        };
        let rows = match self.config.adj_rows {
            AdjRows::OwnDirection => dir,
            AdjRows::Outgoing => Direction::Forward,
        };
        // a_v W for the 0/1 row a_v is the sum of W's rows over v's neighbours.
        let aw = tape.sparse(ops.adjacency(rows), p.var(adj_first.w))?;
        let mut z = tape.add_row(aw, p.var(adj_first.b))?;
        for layer in adj_rest {
            let act = tape.relu(z);
            z = layer.apply(tape, p, act)?;
        }
        Ok(Some(z))
    }

    /// `h W1 + eps * softplus(h W2)`, one score per node. `noise` is an `n x 1` column of draws.
    pub fn ntb(
        tape: &mut Tape,
        h: Var,
        w1: Var,
        w2: Var,
        noise: Option<&Matrix>,
    ) -> Result<Var> {
        let clean = tape.matmul(h, w1)?;
        let Some(eps) = noise else { return Ok(clean) };
        let hw2 = tape.matmul(h, w2)?;
        let scale = tape.softplus(hw2);
        let eps = tape.constant(eps.clone());
        let noisy = tape.mul(eps, scale)?;
        tape.add(clean, noisy)
    }

    /// Fuses the two directional embeddings. Callers apply any stop-gradient beforehand.
    pub fn fuse<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ops: &GraphOps,
        h: [Var; 2],
        mode: PassMode,
        rng: &mut R,
    ) -> Result<FusionOutput> {
        self.check_graph(ops)?;
        match &self.fusion {
            Fusion::Sum { out } => {
                let a = out[0].apply(tape, p, h[0])?;
                let b = out[1].apply(tape, p, h[1])?;
                Ok(FusionOutput {
                    fused: tape.add(a, b)?,
                    q: None,
                })
            }
            Fusion::Gated { w1, w2, out, .. } => {
                let n = ops.num_nodes();
                let noisy = mode.training && self.config.noise;
                let mut scores = [h[0]; 2];
                for dir in Direction::BOTH {
                    let i = dir.index();
                    let mut ht = h[i];
                    if self.config.adj_coef > 0.0 {
                        let a = self
                            .adjacency_embedding(tape, p, ops, dir)?
                            .expect("gated fusion has an adjacency mlp");
                        let a = tape.scale(a, self.config.adj_coef);
                        ht = tape.add(ht, a)?;
                    }
                    let eps = noisy.then(|| {
                        let draws = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        Matrix::from_vec(n, 1, draws)
                    });
                    scores[i] = Self::ntb(tape, ht, p.var(w1[i]), p.var(w2[i]), eps.as_ref())?;
                }
                let s = tape.concat_cols(scores[0], scores[1])?;
                let q = tape.softmax_row(s);
                let qf = tape.col_slice(q, 0, 1)?;
                let qb = tape.col_slice(q, 1, 1)?;
                let a = tape.mul_col(h[0], qf)?;
                let b = tape.mul_col(h[1], qb)?;
                let mix = tape.add(a, b)?;
                Ok(FusionOutput {
                    fused: out.apply(tape, p, mix)?,
                    q: Some(q),
                })
            }
        }
    }

    fn check_graph(&self, ops: &GraphOps) -> Result<()> {
        if ops.num_nodes() != self.config.num_nodes {
            return Err(Error::dim(
                "dhgnn",
                format!(
                    "model built for {} nodes, graph has {}",
                    self.config.num_nodes,
                    ops.num_nodes()
                ),
            ));
        }
        Ok(())
    }

    /// Convenience: both encoders on a fresh pass, returning traces for diagnostics.
    pub fn gate_traces<R: Rng + ?Sized>(
        &self,
        params: &ParamSet,
        ops: &GraphOps,
        features: &Matrix,
        rng: &mut R,
    ) -> Result<[GateTrace; 2]> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let x = tape.constant(features.clone());
        let f = self.encode(&mut tape, &p, ops, x, Direction::Forward, PassMode::EVAL, rng)?;
        let b = self.encode(&mut tape, &p, ops, x, Direction::Backward, PassMode::EVAL, rng)?;
        Ok([f.trace, b.trace])
    }
}
