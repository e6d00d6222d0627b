//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub config: AdamConfig,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            step_count: 0,
            v: m.clone(),
            m,
            config,
        }
    }

    /// One update `p ← p − lr·m̂/(√v̂ + ε)` over every parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} params and {} grads for {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut p = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new([&p], AdamConfig::default());
        adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.v[0], Tensor::zeros(1, 2));
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new([&p], cfg);
        let g = Tensor::from_rows(&[[3.0, -0.5, 1e-2]]).unwrap();
        adam.step(&mut [&mut p], &[g]).unwrap();
        for (v, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 0.01).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let mut adam = AdamState::new([&p], AdamConfig::default());
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(1, 4)]).is_err());
        assert_eq!(adam.step_count, 0);
    }

    /// Scalar Adam written out independently.
    fn reference_adam(x0: f64, grad: impl Fn(f64) -> f64, steps: usize, cfg: AdamConfig) -> Vec<f64> {
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut traj = vec![];
        for t in 1..=steps {
            let g = grad(x);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
            traj.push(x);
        }
        traj
    }

    #[test]
    fn quadratic_trajectory_matches_reference() {
        // f(x) = 0.5·a·(x − c)², per coordinate
        let a = [2.0, 0.5, 7.0];
        let c = [1.0, -3.0, 0.25];
        let x0 = [0.3, 2.0, -1.0];
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut p = Tensor::from_rows(&[x0]).unwrap();
        let mut adam = AdamState::new([&p], cfg);
        let mut traj = vec![];
        for _ in 0..10 {
            let g: Vec<f64> = (0..3).map(|i| a[i] * (p.data()[i] - c[i])).collect();
            adam.step(&mut [&mut p], &[Tensor::matrix(1, 3, g).unwrap()]).unwrap();
            traj.push(p.data().to_vec());
        }
        for i in 0..3 {
            let reference = reference_adam(x0[i], |x| a[i] * (x - c[i]), 10, cfg);
            for (step, r) in reference.iter().enumerate() {
                assert!((traj[step][i] - r).abs() < 1e-12);
            }
        }
    }
}
