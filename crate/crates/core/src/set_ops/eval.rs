//! Plain-tensor entry points: each call builds a throwaway graph of constants.

use crate::autodiff::Graph;
use crate::tensor::{Result, Tensor, TensorError};

use super::blocks;
use super::params::{MabParams, Templates};
use super::records::AttentionRecord;

fn bind_params(g: &mut Graph, p: &MabParams) -> Result<MabParams<crate::autodiff::Var>> {
    p.validate()?;
    Ok(p.bind(g, false))
}

/// Returns the attention output and its `n_q×n_k` weights.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (out, w) = blocks::attention(&mut g, q, k, v)?;
    Ok((g.value(out).clone(), g.value(w).clone()))
}

pub fn multihead(q: &Tensor, k: &Tensor, v: &Tensor, p: &MabParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = bind_params(&mut g, p)?;
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (out, _) = blocks::multihead(&mut g, q, k, v, &pv)?;
    Ok(g.value(out).clone())
}

pub fn mab(y: &Tensor, x: &Tensor, p: &MabParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = bind_params(&mut g, p)?;
    let (y, x) = (g.constant(y.clone()), g.constant(x.clone()));
    let (out, _) = blocks::mab(&mut g, y, x, &pv)?;
    Ok(g.value(out).clone())
}

pub fn sab(x: &Tensor, p: &MabParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = bind_params(&mut g, p)?;
    let x = g.constant(x.clone());
    let out = blocks::sab(&mut g, x, &pv)?;
    Ok(g.value(out).clone())
}

pub fn ae_block(x: &Tensor, inducing: &Templates, p_in: &MabParams, p_out: &MabParams) -> Result<Tensor> {
    if !inducing.learned {
        return Err(TensorError::Invalid("ae_block needs learned inducing points".into()));
    }
    let mut g = Graph::new();
    let pi = bind_params(&mut g, p_in)?;
    let po = bind_params(&mut g, p_out)?;
    let x = g.constant(x.clone());
    let t = g.constant(inducing.matrix.clone());
    let out = blocks::ae_block(&mut g, x, t, &pi, &po)?;
    Ok(g.value(out).clone())
}

pub fn pma(x: &Tensor, t0: &Templates, p: &MabParams) -> Result<Tensor> {
    Ok(picaso_block(x, t0, p, 1)?.0)
}

pub fn picaso_block(x: &Tensor, t0: &Templates, p: &MabParams, steps: usize) -> Result<(Tensor, Vec<AttentionRecord>)> {
    let mut g = Graph::new();
    let pv = bind_params(&mut g, p)?;
    let x = g.constant(x.clone());
    let t = g.constant(t0.matrix.clone());
    let out = blocks::picaso_block(&mut g, x, t, &pv, steps)?;
    Ok((g.value(out.templates).clone(), out.records(&g)))
}

/// Returns the final templates, the final updated set and the template-update records.
pub fn generalized_picaso_block(
    x: &Tensor,
    t0: &Templates,
    p_t: &MabParams,
    p_x: &MabParams,
    steps: usize,
) -> Result<(Tensor, Tensor, Vec<AttentionRecord>)> {
    let mut g = Graph::new();
    let pt = bind_params(&mut g, p_t)?;
    let px = bind_params(&mut g, p_x)?;
    let x = g.constant(x.clone());
    let t = g.constant(t0.matrix.clone());
    let out = blocks::generalized_picaso_block(&mut g, x, t, &pt, &px, steps)?;
    Ok((
        g.value(out.templates).clone(),
        g.value(out.set).clone(),
        out.records(&g),
    ))
}

pub fn pool_mean(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let out = blocks::pool_mean(&mut g, x)?;
    Ok(g.value(out).clone())
}

pub fn pool_max(x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let out = blocks::pool_max(&mut g, x)?;
    Ok(g.value(out).clone())
}
