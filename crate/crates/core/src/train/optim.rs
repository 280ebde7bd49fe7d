use crate::model::ParamSet;
use crate::tensor::Matrix;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: OptState,
}

/// First and second moments mirroring the parameter shapes, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptState {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    pub fn state(&self) -> &OptState {
        &self.state
    }

    /// One update. `grads` is index-aligned with `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let m = self.state.m[i].as_mut_slice();
            let v = self.state.v[i].as_mut_slice();
            for (((w, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = *w * decay - self.lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamGroup;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", ParamGroup::Fusion, Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        p
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0, 0.1);
        opt.step(&mut p, &[Matrix::filled(2, 2, 0.7)]);
        assert_eq!(p, before);
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let mut p = params();
        let before = p.values()[0].clone();
        let mut opt = AdamW::new(&p, 0.1, 0.01);
        opt.step(&mut p, &[Matrix::zeros(2, 2)]);
        let factor = 1.0 - 0.1 * 0.01;
        assert_eq!(p.values()[0], before.map(|x| x * factor));
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = params();
        let mut opt = AdamW::new(&p, 0.01, 0.0);
        opt.step(&mut p, &[Matrix::from_rows(&[&[1.0, -1.0], &[2.0, 0.0]])]);
        let w = p.values()[0].as_slice();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 1.99).abs() < 1e-9);
        assert_eq!(w[3], 3.0);
        assert_eq!(opt.state().step, 1);
    }
}
