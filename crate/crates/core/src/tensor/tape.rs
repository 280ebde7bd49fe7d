//! Reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node, so node order is a topological order.
//! [`Tape::backward`] walks the nodes in reverse once and adds the result
//! into the persistent gradient buffers of `requires_grad` leaves; calling it
//! again accumulates until [`Tape::zero_grad`].

use std::sync::Arc;

use rand::Rng;

use super::sparse::SparseOp;
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Classification targets for the fused softmax losses: `(row, class)` pairs.
pub type Targets = Arc<Vec<(usize, usize)>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRow(Var),
    RevCumsumRow(Var),
    Cumax(Var),
    Lerp(Var, Var, Var),
    ConcatCols(Var, Var),
    ColSlice(Var, usize),
    RepeatCols(Var, usize),
    Sparse(Arc<SparseOp>, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SumAll(Var),
    SumRows(Var),
    CvSquared(Var),
    Focal {
        logits: Var,
        targets: Targets,
        gamma: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Targets,
    },
    BceLogits {
        logits: Var,
        targets: Arc<Vec<f64>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Affine(..) => "affine",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::SoftmaxRow(..) => "softmax_row",
            Op::RevCumsumRow(..) => "reverse_cumsum_row",
            Op::Cumax(..) => "cumax",
            Op::Lerp(..) => "lerp",
            Op::ConcatCols(..) => "concat_cols",
            Op::ColSlice(..) => "col_slice",
            Op::RepeatCols(..) => "repeat_cols",
            Op::Sparse(..) => "sparse",
            Op::GatherRows(..) => "gather_rows",
            Op::SumAll(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::CvSquared(..) => "cv_squared",
            Op::Focal { .. } => "focal_loss",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `log softmax(row)[class]` via log-sum-exp.
fn log_prob(row: &[f64], class: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row[class] - lse
}

fn check_targets(op: &'static str, logits: &Matrix, targets: &[(usize, usize)]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Contract(format!("{op}: empty mask")));
    }
    for &(r, c) in targets {
        if r >= logits.rows() || c >= logits.cols() {
            return Err(Error::dim(
                op,
                format!("target ({r}, {c}) outside logits {:?}", logits.shape()),
            ));
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Trainable leaf; receives gradient.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Same values, cut from the graph: no gradient ever flows through the result.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Test hook: scales the backward output of every op named `op_name` by 1.5.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, op_name: &'static str) {
        self.fault = Some(op_name);
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::dim("matmul", format!("{ar}x{ac} * {br}x{bc}")));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.derived(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    /// `x + 1 * bias` with `bias` a `1 x cols` row vector.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::dim("add_row", format!("{r}x{c} + {:?}", self.shape(bias))));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).as_slice().to_vec();
        for i in 0..r {
            value.row_mut(i).iter_mut().zip(&b).for_each(|(v, bb)| *v += bb);
        }
        Ok(self.derived(value, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Scales row `i` of `x` by `s[i]`, with `s` a `rows x 1` column.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(s) != (r, 1) {
            return Err(Error::dim("mul_col", format!("{r}x{c} * {:?}", self.shape(s))));
        }
        let mut value = self.value(x).clone();
        let sv = self.value(s).as_slice().to_vec();
        for (i, si) in sv.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|v| *v *= si);
        }
        Ok(self.derived(value, Op::MulCol(x, s), &[x, s]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.derived(value, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.derived(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.derived(value, Op::Sigmoid(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        self.derived(value, Op::Softplus(x), &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_row(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.derived(value, Op::SoftmaxRow(x), &[x])
    }

    /// Right-to-left cumulative sum per row: `out[i] = sum_{j >= i} x[j]`.
    pub fn reverse_cumsum_row(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for j in (0..row.len().saturating_sub(1)).rev() {
                row[j] += row[j + 1];
            }
        }
        self.derived(value, Op::RevCumsumRow(x), &[x])
    }

    /// Right-to-left cumulative softmax per row: `reverse_cumsum_row(softmax_row(x))`.
    ///
    /// Computed as right-to-left partial sums of `exp(x - max)` divided by
    /// their total, so the first entry is exactly 1, entries never exceed 1,
    /// and each row is non-increasing in floating point as well.
    pub fn cumax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            for j in (0..row.len().saturating_sub(1)).rev() {
                row[j] += row[j + 1];
            }
            let total = row[0];
            row.iter_mut().for_each(|v| *v /= total);
        }
        self.derived(value, Op::Cumax(x), &[x])
    }

    /// `from + t * (to - from)` elementwise, with the value clamped into
    /// `[min(from, to), max(from, to)]` so rounding never leaves the interval.
    pub fn lerp(&mut self, from: Var, to: Var, t: Var) -> Result<Var> {
        self.same_shape("lerp", from, to)?;
        self.same_shape("lerp", from, t)?;
        let a = self.value(from).as_slice();
        let b = self.value(to).as_slice();
        let w = self.value(t).as_slice();
        let data = a
            .iter()
            .zip(b)
            .zip(w)
            .map(|((&a, &b), &w)| (a + w * (b - a)).clamp(a.min(b), a.max(b)))
            .collect();
        let (r, c) = self.shape(from);
        let value = Matrix::from_vec(r, c, data);
        Ok(self.derived(value, Op::Lerp(from, to, t), &[from, to, t]))
    }

    /// `[a || b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Error::dim("concat_cols", format!("{ar}x{ac} || {br}x{bc}")));
        }
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let value = Matrix::from_vec(ar, ac + bc, data);
        Ok(self.derived(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Columns `start..start + len`.
    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c {
            return Err(Error::dim("col_slice", format!("{start}+{len} > {c}")));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.value(x).row(i)[start..start + len]);
        }
        let value = Matrix::from_vec(r, len, data);
        Ok(self.derived(value, Op::ColSlice(x, start), &[x]))
    }

    /// Repeats every column `times` times in place: `[a, b] -> [a, a, b, b]`.
    pub fn repeat_cols(&mut self, x: Var, times: usize) -> Var {
        let (r, c) = self.shape(x);
        let mut value = Matrix::zeros(r, c * times);
        for i in 0..r {
            let src = self.value(x).row(i).to_vec();
            for (j, v) in src.into_iter().enumerate() {
                value.row_mut(i)[j * times..(j + 1) * times].fill(v);
            }
        }
        self.derived(value, Op::RepeatCols(x, times), &[x])
    }

    /// Sparse product `S * x`.
    pub fn sparse(&mut self, op: Arc<SparseOp>, x: Var) -> Result<Var> {
        if op.forward.cols() != self.shape(x).0 {
            return Err(Error::dim(
                "sparse",
                format!("{}x{} * {:?}", op.forward.rows(), op.forward.cols(), self.shape(x)),
            ));
        }
        let value = op.forward.apply(self.value(x));
        Ok(self.derived(value, Op::Sparse(op, x), &[x]))
    }

    /// Rows of `x` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let r = self.shape(x).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {r}")));
        }
        let value = self.value(x).gather_rows(&idx);
        Ok(self.derived(value, Op::GatherRows(x, idx), &[x]))
    }

    /// Sum of all entries as a `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.derived(value, Op::SumAll(x), &[x])
    }

    /// Column sums as a `1 x cols` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut value = Matrix::zeros(1, c);
        for i in 0..r {
            value
                .as_mut_slice()
                .iter_mut()
                .zip(self.value(x).row(i))
                .for_each(|(o, v)| *o += v);
        }
        self.derived(value, Op::SumRows(x), &[x])
    }

    /// Squared coefficient of variation of a `1 x k` row (population variance / mean^2).
    pub fn cv_squared(&mut self, x: Var) -> Result<Var> {
        let (r, k) = self.shape(x);
        if r != 1 || k == 0 {
            return Err(Error::dim("cv_squared", format!("expected 1xk, got {r}x{k}")));
        }
        let v = self.value(x).as_slice();
        let mean = v.iter().sum::<f64>() / k as f64;
        if mean == 0.0 {
            return Err(Error::Numerical("cv_squared: zero mean".into()));
        }
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64;
        let value = Matrix::scalar(var / (mean * mean));
        Ok(self.derived(value, Op::CvSquared(x), &[x]))
    }

    /// Mean over `targets` of `-(1 - p_t)^gamma * ln p_t`, `p_t` the softmax probability of the target class.
    pub fn focal_loss(&mut self, logits: Var, targets: Targets, gamma: f64) -> Result<Var> {
        if !(gamma >= 0.0) {
            return Err(Error::Contract(format!("focal gamma must be >= 0, got {gamma}")));
        }
        let z = self.value(logits);
        check_targets("focal_loss", z, &targets)?;
        let mut total = 0.0;
        for &(r, c) in targets.iter() {
            let lp = log_prob(z.row(r), c);
            let p = lp.exp();
            total += -(1.0 - p).powf(gamma) * lp;
        }
        let value = Matrix::scalar(total / targets.len() as f64);
        Ok(self.derived(value, Op::Focal { logits, targets, gamma }, &[logits]))
    }

    /// Mean negative log softmax probability of the target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: Targets) -> Result<Var> {
        let z = self.value(logits);
        check_targets("cross_entropy", z, &targets)?;
        let total: f64 = targets.iter().map(|&(r, c)| -log_prob(z.row(r), c)).sum();
        let value = Matrix::scalar(total / targets.len() as f64);
        Ok(self.derived(value, Op::CrossEntropy { logits, targets }, &[logits]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` (an `n x 1` column) against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Vec<f64>>) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if c != 1 || r != targets.len() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("{r}x{c} logits for {} targets", targets.len()),
            ));
        }
        if r == 0 {
            return Err(Error::Contract("bce_with_logits: empty batch".into()));
        }
        let z = self.value(logits).as_slice();
        let total: f64 = z
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Matrix::scalar(total / r as f64);
        Ok(self.derived(value, Op::BceLogits { logits, targets }, &[logits]))
    }

    /// Inverted dropout. Identity when `!training` or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Matrix::from_vec(r, c, mask));
        self.mul(x, mask)
    }

    /// Backpropagates from a `1 x 1` loss, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Contract("backward on a loss with no trainable inputs".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            let mut contributions = self.local_backward(id, &g);
            if self.fault == Some(self.nodes[id].op.name()) {
                for (_, c) in &mut contributions {
                    c.as_mut_slice().iter_mut().for_each(|x| *x *= 1.5);
                }
            }
            for (input, contrib) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to its inputs, given upstream `g`.
    fn local_backward(&self, id: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul(a, b) => vec![
                (*a, g.matmul_t(val(*b))),
                (*b, val(*a).t_matmul(g)),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |gg, bb| gg * bb)),
                (*b, g.zip_map(val(*a), |gg, aa| gg * aa)),
            ],
            Op::AddRow(x, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    gb.as_mut_slice().iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                }
                vec![(*x, g.clone()), (*bias, gb)]
            }
            Op::MulCol(x, s) => {
                let xv = val(*x);
                let sv = val(*s);
                let mut gx = g.clone();
                let mut gs = Matrix::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let si = sv.as_slice()[r];
                    gx.row_mut(r).iter_mut().for_each(|v| *v *= si);
                    gs.as_mut_slice()[r] = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                }
                vec![(*x, gx), (*s, gs)]
            }
            Op::Affine(x, scale) => vec![(*x, g.map(|v| v * scale))],
            Op::Relu(x) => vec![(*x, g.zip_map(val(*x), |gg, xx| if xx > 0.0 { gg } else { 0.0 }))],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(y, |gg, yy| gg * yy * (1.0 - yy)))],
            Op::Softplus(x) => vec![(*x, g.zip_map(val(*x), |gg, xx| gg * sigmoid(xx)))],
            Op::SoftmaxRow(x) => {
                let mut gx = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yy), &gg) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yy * (gg - dot);
                    }
                }
                vec![(*x, gx)]
            }
            Op::RevCumsumRow(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let row = gx.row_mut(r);
                    for j in 1..row.len() {
                        row[j] += row[j - 1];
                    }
                }
                vec![(*x, gx)]
            }
            Op::Cumax(x) => {
                // y = revcumsum(s), s = softmax(x); g_s = forward cumsum of g.
                let mut gx = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let c = yr.len();
                    let s: Vec<f64> = (0..c)
                        .map(|j| if j + 1 < c { yr[j] - yr[j + 1] } else { yr[j] })
                        .collect();
                    let mut gs = g.row(r).to_vec();
                    for j in 1..c {
                        gs[j] += gs[j - 1];
                    }
                    let dot: f64 = s.iter().zip(&gs).map(|(a, b)| a * b).sum();
                    for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = s[j] * (gs[j] - dot);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Lerp(from, to, t) => {
                let a = val(*from);
                let b = val(*to);
                let w = val(*t);
                vec![
                    (*from, g.zip_map(w, |gg, ww| gg * (1.0 - ww))),
                    (*to, g.zip_map(w, |gg, ww| gg * ww)),
                    (*t, g.zip_map(&b.zip_map(a, |bb, aa| bb - aa), |gg, d| gg * d)),
                ]
            }
            Op::ConcatCols(a, b) => {
                let ac = val(*a).cols();
                let bc = val(*b).cols();
                let mut ga = Vec::with_capacity(g.rows() * ac);
                let mut gb = Vec::with_capacity(g.rows() * bc);
                for r in 0..g.rows() {
                    ga.extend_from_slice(&g.row(r)[..ac]);
                    gb.extend_from_slice(&g.row(r)[ac..]);
                }
                vec![
                    (*a, Matrix::from_vec(g.rows(), ac, ga)),
                    (*b, Matrix::from_vec(g.rows(), bc, gb)),
                ]
            }
            Op::ColSlice(x, start) => {
                let mut gx = Matrix::zeros(val(*x).rows(), val(*x).cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                vec![(*x, gx)]
            }
            Op::RepeatCols(x, times) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.row(r);
                    for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = gr[j * times..(j + 1) * times].iter().sum();
                    }
                }
                vec![(*x, gx)]
            }
            Op::Sparse(op, x) => vec![(*x, op.transpose.apply(g))],
            Op::GatherRows(x, idx) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for (k, &i) in idx.iter().enumerate() {
                    gx.row_mut(i).iter_mut().zip(g.row(k)).for_each(|(o, v)| *o += v);
                }
                vec![(*x, gx)]
            }
            Op::SumAll(x) => {
                let (rows, cols) = val(*x).shape();
                vec![(*x, Matrix::filled(rows, cols, g.item()))]
            }
            Op::SumRows(x) => {
                let (rows, cols) = val(*x).shape();
                let mut gx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    gx.row_mut(r).copy_from_slice(g.as_slice());
                }
                vec![(*x, gx)]
            }
            Op::CvSquared(x) => {
                let v = val(*x).as_slice();
                let k = v.len() as f64;
                let mean = v.iter().sum::<f64>() / k;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
                let gg = g.item();
                let data = v
                    .iter()
                    .map(|&vi| gg * (2.0 * (vi - mean) / (k * mean * mean) - 2.0 * var / (k * mean.powi(3))))
                    .collect();
                vec![(*x, Matrix::from_vec(1, v.len(), data))]
            }
            Op::Focal { logits, targets, gamma } => {
                let z = val(*logits);
                let mut gz = Matrix::zeros(z.rows(), z.cols());
                let scale = g.item() / targets.len() as f64;
                for &(r, c) in targets.iter() {
                    let mut s = z.row(r).to_vec();
                    softmax_in_place(&mut s);
                    let lp = log_prob(z.row(r), c);
                    let p = lp.exp();
                    // d/dp of -(1-p)^gamma ln p, times p (chain through dp/dz = p (delta - s)).
                    let q = 1.0 - p;
                    let mut dfdp_p = -q.powf(*gamma);
                    if *gamma != 0.0 && q > 0.0 {
                        dfdp_p += gamma * q.powf(gamma - 1.0) * lp * p;
                    }
                    for (j, o) in gz.row_mut(r).iter_mut().enumerate() {
                        let delta = if j == c { 1.0 } else { 0.0 };
                        *o += scale * dfdp_p * (delta - s[j]);
                    }
                }
                vec![(*logits, gz)]
            }
            Op::CrossEntropy { logits, targets } => {
                let z = val(*logits);
                let mut gz = Matrix::zeros(z.rows(), z.cols());
                let scale = g.item() / targets.len() as f64;
                for &(r, c) in targets.iter() {
                    let mut s = z.row(r).to_vec();
                    softmax_in_place(&mut s);
                    for (j, o) in gz.row_mut(r).iter_mut().enumerate() {
                        let delta = if j == c { 1.0 } else { 0.0 };
                        *o += scale * (s[j] - delta);
                    }
                }
                vec![(*logits, gz)]
            }
            Op::BceLogits { logits, targets } => {
                let z = val(*logits);
                let scale = g.item() / targets.len() as f64;
                let data = z
                    .as_slice()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&zz, &t)| scale * (sigmoid(zz) - t))
                    .collect();
                vec![(*logits, Matrix::from_vec(z.rows(), 1, data))]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = t.constant(Matrix::identity(2));
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let a = t.constant(m(&[&[1.0, 2.0]]));
        let b = t.constant(m(&[&[3.0], &[4.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).item(), 11.0);
        assert!(matches!(t.matmul(a, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[0.0, 0.0, 0.0], &[1000.0, 0.0, -1000.0]]));
        let y = t.softmax_row(x);
        let v = t.value(y);
        for j in 0..3 {
            assert!((v[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[(1, 0)] - 1.0).abs() < 1e-15);
        assert!(v[(1, 1)] >= 0.0 && v[(1, 1)] < 1e-300);
        assert!(v.all_finite());
    }

    #[test]
    fn reverse_cumsum_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0, 3.0]]));
        let y = t.reverse_cumsum_row(x);
        assert_eq!(t.value(y).as_slice(), &[6.0, 5.0, 3.0]);
        let col = t.constant(m(&[&[1.5], &[-2.0]]));
        let yc = t.reverse_cumsum_row(col);
        assert_eq!(t.value(yc), t.value(col));
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.softplus(x);
        assert!((t.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = t.constant(m(&[&[800.0, -800.0]]));
        let yb = t.softplus(big);
        assert_eq!(t.value(yb).as_slice()[0], 800.0);
        assert!(t.value(yb).as_slice()[1] >= 0.0);
    }

    #[test]
    fn backward_simple_closed_forms() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0, 3.0]]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0, 3.0]]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[4.0, 6.0]);
        // second call accumulates
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[8.0, 12.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[2.0, 3.0]]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[1.0, -2.0], &[0.5, 4.0]]));
        let w = t.leaf(m(&[&[3.0, 1.0], &[2.0, -1.0]]));
        let d = t.detach(x);
        assert_eq!(t.value(d), t.value(x));
        let p = t.mul(d, w).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert!(t.grad(x).is_none());
        assert_eq!(t.grad(w).unwrap(), t.value(x));
    }

    #[test]
    fn row_mean_gather_examples() {
        use crate::graph::{DirectedGraph, Direction};
        use crate::tensor::sparse::{SparseOp, SparseRows};
        let g = DirectedGraph::new(3, &[(2, 0), (2, 1)]).unwrap();
        let op = Arc::new(SparseOp::new(SparseRows::mean_aggregator(&g, Direction::Forward)));
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 3.0], &[3.0, 5.0], &[9.0, 9.0]]));
        let y = t.sparse(op, x).unwrap();
        assert_eq!(t.value(y).row(2), &[2.0, 4.0]);
        assert_eq!(t.value(y).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0, 3.0]]));
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let n = 100_000;
        let x = t.constant(Matrix::filled(1, n, 2.0));
        let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
        let mean = t.value(y).mean();
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
        let zeros = t.value(y).as_slice().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn loss_closed_forms() {
        let mut t = Tape::new();
        let z = t.constant(m(&[&[0.0, 0.0]]));
        let tg: Targets = Arc::new(vec![(0, 0)]);
        let ce = t.cross_entropy(z, tg.clone()).unwrap();
        assert!((t.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let f0 = t.focal_loss(z, tg.clone(), 0.0).unwrap();
        assert!((t.value(f0).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let f2 = t.focal_loss(z, tg.clone(), 2.0).unwrap();
        assert!((t.value(f2).item() - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);

        let u = t.constant(Matrix::zeros(1, 4));
        let ce4 = t.cross_entropy(u, tg).unwrap();
        assert!((t.value(ce4).item() - 4f64.ln()).abs() < 1e-15);

        let empty: Targets = Arc::new(vec![]);
        assert!(matches!(t.cross_entropy(z, empty.clone()), Err(Error::Contract(_))));
        assert!(matches!(t.focal_loss(z, empty, 2.0), Err(Error::Contract(_))));
    }

    #[test]
    fn cv_squared_closed_forms() {
        let mut t = Tape::new();
        let bal = t.constant(m(&[&[3.0, 3.0]]));
        let c = t.cv_squared(bal).unwrap();
        assert_eq!(t.value(c).item(), 0.0);
        let col = t.constant(m(&[&[5.0, 0.0]]));
        let c = t.cv_squared(col).unwrap();
        assert_eq!(t.value(c).item(), 1.0);
        let skew = t.constant(m(&[&[1.5, 0.5]]));
        let c = t.cv_squared(skew).unwrap();
        assert_eq!(t.value(c).item(), 0.25);
    }

    #[test]
    fn fault_hook_changes_gradient() {
        let build = |t: &mut Tape| {
            let x = t.leaf(m(&[&[0.3, -0.2]]));
            let y = t.softplus(x);
            let s = t.sum(y);
            (x, s)
        };
        let mut clean = Tape::new();
        let (x, s) = build(&mut clean);
        clean.backward(s).unwrap();
        let mut faulty = Tape::new();
        faulty.inject_backward_fault("softplus");
        let (xf, sf) = build(&mut faulty);
        faulty.backward(sf).unwrap();
        assert_ne!(clean.grad(x), faulty.grad(xf));
    }
}
