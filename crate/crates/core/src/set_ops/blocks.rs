//! Attention-based set operators built on the autodiff graph.
//!
//! Every function takes graph handles; sets are `n×d` matrices whose rows are
//! the set elements.

use crate::autodiff::{Graph, Var};
use crate::tensor::{Result, TensorError};

use super::params::MabParams;
use super::records::AttentionRecord;

/// `softmax(Q·Kᵀ/√d_q)·V`. Returns the output and the softmax weights.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let dq = g.shape(q)[1];
    if g.shape(k)[1] != dq {
        return Err(TensorError::ShapeMismatch {
            op: "attention(Q, K)",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    if g.shape(k)[0] != g.shape(v)[0] {
        return Err(TensorError::ShapeMismatch {
            op: "attention(K, V)",
            lhs: g.shape(k).to_vec(),
            rhs: g.shape(v).to_vec(),
        });
    }
    let scores = g.matmul_bt(q, k)?;
    let scaled = g.scale(scores, 1.0 / (dq as f64).sqrt())?;
    let weights = g.softmax_rows(scaled)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// `concat(head_1 … head_h)·W^O` with `head_j = attention(Q·W_j^Q, K·W_j^K, V·W_j^V)`.
/// Returns the output and one weight matrix per head.
pub fn multihead(g: &mut Graph, q: Var, k: Var, v: Var, p: &MabParams<Var>) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(p.w_q)[0];
    if p.heads == 0 || !d.is_multiple_of(p.heads) {
        return Err(TensorError::Invalid(format!(
            "feature width {d} is not divisible by head count {}",
            p.heads
        )));
    }
    let dh = d / p.heads;
    let qp = g.matmul(q, p.w_q)?;
    let kp = g.matmul(k, p.w_k)?;
    let vp = g.matmul(v, p.w_v)?;
    if p.heads == 1 {
        let (out, w) = attention(g, qp, kp, vp)?;
        let out = g.matmul(out, p.w_o)?;
        return Ok((out, vec![w]));
    }
    let mut outs = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for j in 0..p.heads {
        let qj = g.slice_cols(qp, j * dh, dh)?;
        let kj = g.slice_cols(kp, j * dh, dh)?;
        let vj = g.slice_cols(vp, j * dh, dh)?;
        let (o, w) = attention(g, qj, kj, vj)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = g.concat_cols(&outs)?;
    let out = g.matmul(cat, p.w_o)?;
    Ok((out, weights))
}

/// Row-wise `relu(x·W + b)`.
pub fn rff(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let lin = g.matmul(x, w)?;
    let aff = g.add_row(lin, b)?;
    g.relu(aff)
}

/// `MAB(Y, X) = H + rFF(H)` with `H = Y·W^Y + rFF(Multihead(Y, X, X))`.
pub fn mab(g: &mut Graph, y: Var, x: Var, p: &MabParams<Var>) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(p.w_q)[0];
    for operand in [y, x] {
        if g.shape(operand)[1] != d {
            return Err(TensorError::ShapeMismatch {
                op: "mab",
                lhs: g.shape(operand).to_vec(),
                rhs: g.shape(p.w_q).to_vec(),
            });
        }
    }
    let (mh, weights) = multihead(g, y, x, x, p)?;
    let inner = rff(g, mh, p.ff_inner_w, p.ff_inner_b)?;
    let yw = g.matmul(y, p.w_y)?;
    let h = g.add(yw, inner)?;
    let outer = rff(g, h, p.ff_outer_w, p.ff_outer_b)?;
    let out = g.add(h, outer)?;
    Ok((out, weights))
}

/// Self-attention block, `mab(X, X)`.
pub fn sab(g: &mut Graph, x: Var, p: &MabParams<Var>) -> Result<Var> {
    Ok(mab(g, x, x, p)?.0)
}

/// Induced encoder: `Z = MAB(T, X)`, `X′ = MAB(X, Z)`.
pub fn ae_block(g: &mut Graph, x: Var, inducing: Var, p_in: &MabParams<Var>, p_out: &MabParams<Var>) -> Result<Var> {
    let (z, _) = mab(g, inducing, x, p_in)?;
    Ok(mab(g, x, z, p_out)?.0)
}

/// Result of a template cascade.
#[derive(Debug, Clone)]
pub struct Cascade {
    /// Final `k×d` template.
    pub templates: Var,
    /// Per step, per head softmax weights (`k×n`) of the template update.
    pub attention: Vec<Vec<Var>>,
}

impl Cascade {
    pub fn records(&self, g: &Graph) -> Vec<AttentionRecord> {
        collect_records(g, &self.attention)
    }
}

pub fn collect_records(g: &Graph, steps: &[Vec<Var>]) -> Vec<AttentionRecord> {
    let mut out = vec![];
    for (step, heads) in steps.iter().enumerate() {
        for (head, &w) in heads.iter().enumerate() {
            out.push(AttentionRecord::new(step, head, g.value(w).clone()));
        }
    }
    out
}

/// Runs `T_{i+1} = step(T_i)` for `i = 0 … steps−1`.
///
/// `step` returns the new template and the attention weights it produced.
pub fn cascade(
    g: &mut Graph,
    t0: Var,
    steps: usize,
    mut step: impl FnMut(&mut Graph, Var) -> Result<(Var, Vec<Var>)>,
) -> Result<Cascade> {
    if steps == 0 {
        return Err(TensorError::Invalid("cascade needs at least one step".into()));
    }
    let mut t = t0;
    let mut attention = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, w) = step(g, t)?;
        t = next;
        attention.push(w);
    }
    Ok(Cascade {
        templates: t,
        attention,
    })
}

/// PICASO block: `T_{i+1} = MAB(T_i, X)` with the same weights at every step.
pub fn picaso_block(g: &mut Graph, x: Var, t0: Var, p: &MabParams<Var>, steps: usize) -> Result<Cascade> {
    cascade(g, t0, steps, |g, t| mab(g, t, x, p))
}

/// Static pooling: a single `MAB(T₀, X)`.
pub fn pma(g: &mut Graph, x: Var, t0: Var, p: &MabParams<Var>) -> Result<Cascade> {
    picaso_block(g, x, t0, p, 1)
}

#[derive(Debug, Clone)]
pub struct GeneralizedCascade {
    pub templates: Var,
    /// The last updated set (the input itself when `steps == 1`).
    pub set: Var,
    pub attention: Vec<Vec<Var>>,
}

impl GeneralizedCascade {
    pub fn records(&self, g: &Graph) -> Vec<AttentionRecord> {
        collect_records(g, &self.attention)
    }
}

/// Generalized PICASO block. `T₁ = MAB_T(T₀, X₀)`; then for `i ≥ 1`,
/// `X_i = MAB_X(X_{i−1}, T_i)` followed by `T_{i+1} = MAB_T(T_i, X_i)`.
pub fn generalized_picaso_block(
    g: &mut Graph,
    x: Var,
    t0: Var,
    p_t: &MabParams<Var>,
    p_x: &MabParams<Var>,
    steps: usize,
) -> Result<GeneralizedCascade> {
    if steps == 0 {
        return Err(TensorError::Invalid("cascade needs at least one step".into()));
    }
    let (mut t, w) = mab(g, t0, x, p_t)?;
    let mut attention = vec![w];
    let mut set = x;
    for _ in 1..steps {
        set = mab(g, set, t, p_x)?.0;
        let (next, w) = mab(g, t, set, p_t)?;
        t = next;
        attention.push(w);
    }
    Ok(GeneralizedCascade {
        templates: t,
        set,
        attention,
    })
}

/// Column-wise mean, `n×d → 1×d`.
pub fn pool_mean(g: &mut Graph, x: Var) -> Result<Var> {
    g.mean_cols(x)
}

/// Column-wise max, `n×d → 1×d`.
pub fn pool_max(g: &mut Graph, x: Var) -> Result<Var> {
    g.max_cols(x)
}
