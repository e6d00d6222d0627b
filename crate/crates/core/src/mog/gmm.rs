//! Isotropic Gaussian-mixture parameters, the per-point log-likelihood and
//! hard assignment.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Mixture of `k` isotropic 2-D Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    /// `k×2`
    pub means: Tensor,
    /// One standard deviation per component.
    pub stds: Vec<f64>,
    /// Mixture weights are `softmax(mix_logits)`.
    pub mix_logits: Vec<f64>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.stds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, _) = self.means.dims2()?;
        if self.stds.len() != k || self.mix_logits.len() != k {
            return Err(TensorError::Invalid(format!(
                "gmm params disagree on k: {} means, {} stds, {} logits",
                k,
                self.stds.len(),
                self.mix_logits.len()
            )));
        }
        if let Some(s) = self.stds.iter().find(|s| s.is_nan() || **s <= 0.0) {
            return Err(TensorError::Invalid(format!(
                "standard deviations must be positive, got {s}"
            )));
        }
        Ok(())
    }

    pub fn log_weights(&self) -> Vec<f64> {
        let max = self.mix_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.mix_logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        self.mix_logits.iter().map(|l| l - lse).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights().into_iter().map(f64::exp).collect()
    }

    /// Means moved by `delta` in every coordinate.
    pub fn shifted(&self, delta: f64) -> GmmParams {
        GmmParams {
            means: self.means.map(|v| v + delta),
            ..self.clone()
        }
    }
}

/// Graph handles for mixture parameters as produced by the model head.
#[derive(Debug, Clone, Copy)]
pub struct GmmVars {
    /// `k×2`
    pub means: Var,
    /// `k×1`, positive
    pub stds: Var,
    /// `k×1`
    pub mix_logits: Var,
}

impl GmmVars {
    pub fn to_params(&self, g: &Graph) -> GmmParams {
        GmmParams {
            means: g.value(self.means).clone(),
            stds: g.value(self.stds).data().to_vec(),
            mix_logits: g.value(self.mix_logits).data().to_vec(),
        }
    }

    pub fn constants(g: &mut Graph, p: &GmmParams) -> Result<GmmVars> {
        p.validate()?;
        let k = p.k();
        Ok(GmmVars {
            means: g.constant(p.means.clone()),
            stds: g.constant(Tensor::matrix(k, 1, p.stds.clone())?),
            mix_logits: g.constant(Tensor::matrix(k, 1, p.mix_logits.clone())?),
        })
    }
}

/// Average over points of `log Σ_j π_j 𝒩(x_i; μ_j, σ_j² I)`, as a `1×1` node.
pub fn gmm_log_likelihood_graph(g: &mut Graph, x: Var, p: &GmmVars) -> Result<Var> {
    let d = g.shape(x)[1];
    let sq = g.pairwise_sq_dist(x, p.means)?; // n×k
    let std_row = g.transpose(p.stds)?; // 1×k
    let var = g.square(std_row)?;
    let two_var = g.scale(var, 2.0)?;
    let inv_two_var = g.recip(two_var)?;
    let quad = g.mul(sq, inv_two_var)?;

    let logit_row = g.transpose(p.mix_logits)?;
    let lse = g.logsumexp_rows(logit_row)?;
    let log_pi = g.sub(logit_row, lse)?;
    // log of the normalizer (2πσ²)^{d/2}
    let log_var = g.log(var)?;
    let half_d_log_var = g.scale(log_var, d as f64 / 2.0)?;
    let log_norm = g.add_const(half_d_log_var, d as f64 / 2.0 * (2.0 * PI).ln())?;
    let row_const = g.sub(log_pi, log_norm)?; // 1×k

    let neg_quad = g.neg(quad)?;
    let comp = g.add_row(neg_quad, row_const)?;
    let per_point = g.logsumexp_rows(comp)?;
    g.mean(per_point)
}

/// Average per-point log-likelihood of `x` (`n×2`) under `params`.
pub fn gmm_log_likelihood(x: &Tensor, params: &GmmParams) -> Result<f64> {
    let mut g = Graph::new();
    let vars = GmmVars::constants(&mut g, params)?;
    let xv = g.constant(x.clone());
    let ll = gmm_log_likelihood_graph(&mut g, xv, &vars)?;
    Ok(g.value(ll).data()[0])
}

/// Adds `delta` to every coordinate of every point.
pub fn shift_set(x: &Tensor, delta: f64) -> Tensor {
    x.map(|v| v + delta)
}

/// Per-point argmax of `π_j 𝒩(x; μ_j, σ_j² I)`; ties go to the lowest index.
pub fn assign_clusters(x: &Tensor, params: &GmmParams) -> Result<Vec<usize>> {
    params.validate()?;
    let (n, d) = x.dims2()?;
    if params.means.cols() != d {
        return Err(TensorError::ShapeMismatch {
            op: "assign_clusters",
            lhs: x.shape().to_vec(),
            rhs: params.means.shape().to_vec(),
        });
    }
    let log_pi = params.log_weights();
    let labels = (0..n)
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, (&lp, &sd)) in log_pi.iter().zip(&params.stds).enumerate() {
                let s2 = sd * sd;
                let dist: f64 = x
                    .row(i)
                    .iter()
                    .zip(params.means.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let score = lp - d as f64 / 2.0 * (2.0 * PI * s2).ln() - dist / (2.0 * s2);
                if score > best.1 {
                    best = (j, score);
                }
            }
            best.0
        })
        .collect();
    Ok(labels)
}
