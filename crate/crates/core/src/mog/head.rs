use crate::autodiff::{Graph, Var};
use crate::tensor::{Result, Tensor, TensorError};

use super::gmm::{GmmParams, GmmVars};

/// Floor added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Outputs per template row: two mean coordinates, a raw scale, a mixture logit.
pub const HEAD_OUTPUTS: usize = 4;

/// Row-wise affine map `d → 4` read as `(μ_x, μ_y, s, g)` with
/// `σ = softplus(s) + 1e-4` and `g` the component's mixture logit.
pub fn mog_head_graph(g: &mut Graph, templates: Var, w: Var, b: Var) -> Result<GmmVars> {
    let d = g.shape(templates)[1];
    if g.shape(w) != [d, HEAD_OUTPUTS] {
        return Err(TensorError::ShapeMismatch {
            op: "mog_head",
            lhs: g.shape(templates).to_vec(),
            rhs: g.shape(w).to_vec(),
        });
    }
    let lin = g.matmul(templates, w)?;
    let out = g.add_row(lin, b)?;
    let means = g.slice_cols(out, 0, 2)?;
    let raw = g.slice_cols(out, 2, 1)?;
    let soft = g.softplus(raw)?;
    let stds = g.add_const(soft, SIGMA_FLOOR)?;
    let mix_logits = g.slice_cols(out, 3, 1)?;
    Ok(GmmVars {
        means,
        stds,
        mix_logits,
    })
}

pub fn mog_head(templates: &Tensor, w: &Tensor, b: &Tensor) -> Result<GmmParams> {
    let mut g = Graph::new();
    let t = g.constant(templates.clone());
    let w = g.constant(w.clone());
    let b = g.constant(b.clone());
    let vars = mog_head_graph(&mut g, t, w, b)?;
    Ok(vars.to_params(&g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_inputs_give_origin_and_uniform_weights() {
        let p = mog_head(&Tensor::zeros(4, 8), &Tensor::zeros(8, 4), &Tensor::zeros(1, 4)).unwrap();
        assert_eq!(p.means, Tensor::zeros(4, 2));
        for s in &p.stds {
            assert!((s - (2f64.ln() + 1e-4)).abs() < 1e-15);
            assert!((s - 0.6933).abs() < 1e-4);
        }
        for w in p.weights() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch() {
        assert!(mog_head(&Tensor::zeros(4, 8), &Tensor::zeros(6, 4), &Tensor::zeros(1, 4)).is_err());
    }

    #[test]
    fn stds_positive_for_very_negative_inputs() {
        let mut b = Tensor::zeros(1, 4);
        b.set(0, 2, -800.0);
        let p = mog_head(&Tensor::zeros(2, 3), &Tensor::zeros(3, 4), &b).unwrap();
        assert!(p.stds.iter().all(|&s| s >= SIGMA_FLOOR));
    }
}
