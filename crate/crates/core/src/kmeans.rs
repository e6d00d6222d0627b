//! Soft K-means in the attention-pooling form, and the weight-free PICASO step
//! it is compared against.
//!
//! Responsibilities are normalized across points for each cluster: row `i` of
//! the `k×n` responsibility matrix is `softmax_m(t_i·x_m/√d)`. This is the
//! direction an attention softmax over keys produces, not the textbook
//! per-point normalization across clusters.

use crate::autodiff::Graph;
use crate::set_ops::{self, MabParams};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// `k×n`; each row sums to one.
    pub responsibilities: Tensor,
    /// `k×d`; row `i` is `Σ_m p(x_m|c_i)·x_m`.
    pub centroids: Tensor,
}

fn check_operands(t: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    let (k, d) = t.dims2()?;
    let (n, dx) = x.dims2()?;
    if d != dx {
        return Err(TensorError::ShapeMismatch {
            op: "soft_kmeans",
            lhs: t.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    Ok((k, n, d))
}

/// One centroid update, written directly from the per-entry formula.
pub fn soft_kmeans_step(t: &Tensor, x: &Tensor) -> Result<SoftAssignment> {
    let (k, n, d) = check_operands(t, x)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut resp = Vec::with_capacity(k * n);
    let mut centroids = vec![0.0; k * d];
    for i in 0..k {
        let ti = t.row(i);
        let logits: Vec<f64> = (0..n)
            .map(|m| ti.iter().zip(x.row(m)).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (m, e) in exps.iter().enumerate() {
            let p = e / total;
            resp.push(p);
            for (c, xv) in centroids[i * d..(i + 1) * d].iter_mut().zip(x.row(m)) {
                *c += p * xv;
            }
        }
    }
    Ok(SoftAssignment {
        responsibilities: Tensor::matrix(k, n, resp)?,
        centroids: Tensor::matrix(k, d, centroids)?,
    })
}

/// Feeds centroids forward `steps` times; returns the last assignment.
pub fn iterate_soft_kmeans(t0: &Tensor, x: &Tensor, steps: usize) -> Result<SoftAssignment> {
    if steps == 0 {
        return Err(TensorError::Invalid(
            "iterate_soft_kmeans needs at least one step".into(),
        ));
    }
    let mut current = soft_kmeans_step(t0, x)?;
    for _ in 1..steps {
        current = soft_kmeans_step(&current.centroids, x)?;
    }
    Ok(current)
}

/// The multihead primitive with one head, identity projections, no residual
/// and no feed-forward: `softmax(T·Xᵀ/√d)·X`.
pub fn stripped_pb_step(t: &Tensor, x: &Tensor) -> Result<Tensor> {
    stripped_cascade(t, x, 1)
}

/// The PICASO cascade driver run with [`stripped_pb_step`] as its update.
pub fn stripped_cascade(t0: &Tensor, x: &Tensor, steps: usize) -> Result<Tensor> {
    let (_, _, d) = check_operands(t0, x)?;
    let mut g = Graph::new();
    let params = MabParams::identity(d).bind(&mut g, false);
    let xv = g.constant(x.clone());
    let tv = g.constant(t0.clone());
    let out = set_ops::cascade(&mut g, tv, steps, |g, t| set_ops::multihead(g, t, xv, xv, &params))?;
    Ok(g.value(out.templates).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_set_collapses_centroids() {
        let t = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]]).unwrap();
        let x = Tensor::from_rows(&[[0.7, -1.1]]).unwrap();
        let a = soft_kmeans_step(&t, &x).unwrap();
        for i in 0..3 {
            assert_eq!(a.centroids.row(i), x.row(0));
            assert_eq!(a.responsibilities.get(i, 0), 1.0);
        }
        let s = stripped_pb_step(&t, &x).unwrap();
        for i in 0..3 {
            assert!((s.get(i, 0) - 0.7).abs() < 1e-15 && (s.get(i, 1) + 1.1).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_template_gives_mean() {
        let t = Tensor::zeros(2, 2);
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, -2.0], [-1.0, 3.0]]).unwrap();
        let a = soft_kmeans_step(&t, &x).unwrap();
        for i in 0..2 {
            assert!((a.centroids.get(i, 0) - 1.0).abs() < 1e-15);
            assert!((a.centroids.get(i, 1) - 1.0).abs() < 1e-15);
            for m in 0..3 {
                assert!((a.responsibilities.get(i, m) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn centered_data_with_zero_template_is_fixed() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [-1.0, -2.0], [0.5, -0.25], [-0.5, 0.25]]).unwrap();
        let t = Tensor::zeros(3, 2);
        let a = iterate_soft_kmeans(&t, &x, 5).unwrap();
        assert!(a.centroids.max_abs_diff(&t).unwrap() < 1e-12);
    }

    #[test]
    fn zero_steps_and_empty_width_errors() {
        let t = Tensor::zeros(2, 2);
        let x = Tensor::zeros(3, 2);
        assert!(iterate_soft_kmeans(&t, &x, 0).is_err());
        assert!(stripped_cascade(&t, &x, 0).is_err());
        assert!(soft_kmeans_step(&t, &Tensor::zeros(3, 3)).is_err());
    }
}
