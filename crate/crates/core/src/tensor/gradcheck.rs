//! Central finite-difference gradient checking.

use serde::Serialize;

use super::{Matrix, Tape, Var};
use crate::error::Result;

/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Central differences of a scalar function at `x`.
pub fn numeric_gradient(
    mut f: impl FnMut(&Matrix) -> Result<f64>,
    x: &Matrix,
    step: f64,
) -> Result<Matrix> {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = f(&probe)?;
        probe.as_mut_slice()[i] = orig - step;
        let down = f(&probe)?;
        probe.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest per-entry relative error.
    pub max_error: f64,
    /// Flat index of the entry with the largest error.
    pub worst_index: Option<usize>,
    pub tol: f64,
    pub passed: bool,
    #[serde(skip)]
    pub analytic: Matrix,
    #[serde(skip)]
    pub numeric: Matrix,
}

impl GradCheckReport {
    pub fn compare(analytic: Matrix, numeric: Matrix, tol: f64) -> Self {
        assert_eq!(analytic.shape(), numeric.shape());
        let mut max_error = 0.0;
        let mut worst_index = None;
        for (i, (&a, &n)) in analytic.as_slice().iter().zip(numeric.as_slice()).enumerate() {
            let e = relative_error(a, n);
            if worst_index.is_none() || e > max_error || e.is_nan() {
                max_error = e;
                worst_index = Some(i);
            }
        }
        GradCheckReport {
            max_error,
            worst_index,
            tol,
            passed: max_error <= tol,
            analytic,
            numeric,
        }
    }
}

/// Checks the tape gradient of the scalar `f(x)` against central differences.
///
/// `f` builds its computation on the given tape from the input var and
/// returns a `1 x 1` output; it must be deterministic.
pub fn grad_check<F>(f: F, x: &Matrix, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));

    let numeric = numeric_gradient(
        |probe| {
            let mut t = Tape::new();
            let v = t.constant(probe.clone());
            let out = f(&mut t, v)?;
            Ok(t.value(out).item())
        },
        x,
        step,
    )?;
    Ok(GradCheckReport::compare(analytic, numeric, tol))
}
