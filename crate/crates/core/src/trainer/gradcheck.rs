//! Central finite-difference checks of the analytic gradients.
//!
//! A check binds a list of input tensors as tracked leaves, reduces the block
//! output to a scalar with fixed random weights, and compares every gradient
//! entry against `(f(x+ε) − f(x−ε)) / 2ε`. The reported error of an entry is
//! `|a − n| / max(|a|, |n|, 1)`: relative for large gradients, absolute for
//! small ones.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::mog::{gmm_log_likelihood_graph, mog_head_graph, GmmVars};
use crate::seed::rng_for;
use crate::set_ops::{self, MabParams};
use crate::tensor::{Result, Tensor};

use super::config::{EncoderKind, ModelConfig, PoolKind};
use super::model::{build_model, Model};

/// Default finite-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Pass threshold for the full suite.
pub const TOLERANCE: f64 = 1e-5;
/// The linear block is affine in each input, so its central difference is
/// exact at any step; a wide step keeps rounding noise out and the tighter
/// threshold applies.
pub const LINEAR_STEP: f64 = 1e-2;
pub const LINEAR_TOLERANCE: f64 = 1e-10;

/// `(step, tolerance)` used for the named block when the suite step is `eps`.
pub fn block_settings(name: &str, eps: f64) -> (f64, f64) {
    if name == "linear" {
        (LINEAR_STEP, LINEAR_TOLERANCE)
    } else {
        (eps, TOLERANCE)
    }
}

type ScalarFn = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// A scalar function of several tensors, ready to be checked.
pub struct Probe {
    pub inputs: Vec<Tensor>,
    pub f: Box<ScalarFn>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub entries: usize,
}

fn eval(f: &ScalarFn, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Compares analytic and numerical gradients for every input entry.
///
/// `fault` adds a constant to the first analytic entry; it exists so the
/// harness itself can be shown to fail.
pub fn check_probe(probe: &Probe, eps: f64, fault: Option<f64>) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = probe.inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = (probe.f)(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: (0, 0),
        entries: 0,
    };
    let mut inputs = probe.inputs.clone();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + eps;
            let plus = eval(&*probe.f, &inputs)?;
            inputs[i].data_mut()[j] = orig - eps;
            let minus = eval(&*probe.f, &inputs)?;
            inputs[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let mut a = analytic.data()[j];
            if report.entries == 0 {
                a += fault.unwrap_or(0.0);
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > report.max_error || report.entries == 0 {
                report.max_error = err;
                report.worst = (i, j);
            }
            report.entries += 1;
        }
    }
    Ok(report)
}

/// `Σ out ⊙ R` for a fixed weight matrix `R` shaped like `out`.
fn weighted_sum(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let prod = g.mul(out, rv)?;
    g.sum(prod)
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::randn(rows, cols, 1.0, rng)
}

/// MAB weights with every entry (biases included) random.
fn random_mab(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> MabParams {
    let p = MabParams::init(d, heads, rng).expect("valid probe dims");
    p.map(|t| Tensor::randn(t.rows(), t.cols(), 0.5, rng))
}

fn mab_from(heads: usize, vars: &[Var]) -> MabParams<Var> {
    MabParams {
        heads,
        w_q: vars[0],
        w_k: vars[1],
        w_v: vars[2],
        w_o: vars[3],
        w_y: vars[4],
        ff_inner_w: vars[5],
        ff_inner_b: vars[6],
        ff_outer_w: vars[7],
        ff_outer_b: vars[8],
    }
}

const D: usize = 4;
const HEADS: usize = 2;
const K: usize = 3;

/// Names of the registered checks, in run order.
pub const BLOCKS: [&str; 12] = [
    "linear",
    "attention",
    "multihead",
    "mab",
    "sab",
    "ae_block",
    "pma",
    "pb",
    "gpb",
    "mog_head",
    "gmm_log_likelihood",
    "model",
];

/// Random probe `index` for the named block; inputs have `n ≤ 8`, `d ≤ 8`.
pub fn block_probe(name: &str, index: usize, seed: u64) -> Option<Probe> {
    let mut rng = rng_for(seed, &format!("gradcheck/{name}/{index}"));
    let n = rng.random_range(1..=8usize);
    let probe = match name {
        "linear" => {
            let r = randn(&mut rng, n, D);
            Probe {
                inputs: vec![randn(&mut rng, n, D), randn(&mut rng, D, D), randn(&mut rng, 1, D)],
                f: Box::new(move |g, v| {
                    let xw = g.matmul(v[0], v[1])?;
                    let out = g.add_row(xw, v[2])?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "attention" => {
            let r = randn(&mut rng, K, D);
            Probe {
                inputs: vec![randn(&mut rng, K, D), randn(&mut rng, n, D), randn(&mut rng, n, D)],
                f: Box::new(move |g, v| {
                    let (out, _) = set_ops::attention(g, v[0], v[1], v[2])?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "multihead" => {
            let r = randn(&mut rng, K, D);
            let mut inputs = vec![randn(&mut rng, K, D), randn(&mut rng, n, D), randn(&mut rng, n, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let p = mab_from(HEADS, &v[3..]);
                    let (out, _) = set_ops::multihead(g, v[0], v[1], v[2], &p)?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "mab" => {
            let r = randn(&mut rng, K, D);
            let mut inputs = vec![randn(&mut rng, K, D), randn(&mut rng, n, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let (out, _) = set_ops::mab(g, v[0], v[1], &mab_from(HEADS, &v[2..]))?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "sab" => {
            let r = randn(&mut rng, n, D);
            let mut inputs = vec![randn(&mut rng, n, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let out = set_ops::sab(g, v[0], &mab_from(HEADS, &v[1..]))?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "ae_block" => {
            let r = randn(&mut rng, n, D);
            let mut inputs = vec![randn(&mut rng, n, D), randn(&mut rng, K, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let out =
                        set_ops::ae_block(g, v[0], v[1], &mab_from(HEADS, &v[2..11]), &mab_from(HEADS, &v[11..]))?;
                    weighted_sum(g, out, &r)
                }),
            }
        }
        "pma" | "pb" => {
            let steps = if name == "pma" { 1 } else { 2 };
            let r = randn(&mut rng, K, D);
            let mut inputs = vec![randn(&mut rng, n, D), randn(&mut rng, K, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let c = set_ops::picaso_block(g, v[0], v[1], &mab_from(HEADS, &v[2..]), steps)?;
                    weighted_sum(g, c.templates, &r)
                }),
            }
        }
        "gpb" => {
            let rt = randn(&mut rng, K, D);
            let rx = randn(&mut rng, n, D);
            let mut inputs = vec![randn(&mut rng, n, D), randn(&mut rng, K, D)];
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            inputs.extend(random_mab(D, HEADS, &mut rng).leaves().into_iter().cloned());
            Probe {
                inputs,
                f: Box::new(move |g, v| {
                    let c = set_ops::generalized_picaso_block(
                        g,
                        v[0],
                        v[1],
                        &mab_from(HEADS, &v[2..11]),
                        &mab_from(HEADS, &v[11..]),
                        2,
                    )?;
                    let a = weighted_sum(g, c.templates, &rt)?;
                    let b = weighted_sum(g, c.set, &rx)?;
                    g.add(a, b)
                }),
            }
        }
        "mog_head" => {
            let (rm, rs, rl) = (randn(&mut rng, K, 2), randn(&mut rng, K, 1), randn(&mut rng, K, 1));
            Probe {
                inputs: vec![randn(&mut rng, K, D), randn(&mut rng, D, 4), randn(&mut rng, 1, 4)],
                f: Box::new(move |g, v| {
                    let out = mog_head_graph(g, v[0], v[1], v[2])?;
                    let a = weighted_sum(g, out.means, &rm)?;
                    let b = weighted_sum(g, out.stds, &rs)?;
                    let c = weighted_sum(g, out.mix_logits, &rl)?;
                    let ab = g.add(a, b)?;
                    g.add(ab, c)
                }),
            }
        }
        "gmm_log_likelihood" => {
            let stds = Tensor::matrix(K, 1, (0..K).map(|_| rng.random_range(0.5..1.5)).collect()).expect("K×1");
            Probe {
                inputs: vec![
                    randn(&mut rng, n, 2),
                    randn(&mut rng, K, 2),
                    stds,
                    randn(&mut rng, K, 1),
                ],
                f: Box::new(|g, v| {
                    let vars = GmmVars {
                        means: v[1],
                        stds: v[2],
                        mix_logits: v[3],
                    };
                    gmm_log_likelihood_graph(g, v[0], &vars)
                }),
            }
        }
        "model" => {
            let cfg = ModelConfig {
                encoder: EncoderKind::Ae(K),
                encoder_depth: 1,
                pool: PoolKind::Pb,
                steps: 2,
                d: D,
                heads: HEADS,
                k: K,
                post_sa: false,
                input_dim: 2,
            };
            let model = build_model(&cfg, rng.random()).expect("valid probe config");
            let x = randn(&mut rng, n, 2);
            model_probe(model, x)
        }
        _ => return None,
    };
    Some(probe)
}

/// The training loss (negated average log-likelihood) of `model` on `x` as a
/// function of the model's parameters.
pub fn model_probe(model: Model, x: Tensor) -> Probe {
    let inputs: Vec<Tensor> = model.params.named().into_iter().map(|(_, t)| t.clone()).collect();
    Probe {
        inputs,
        f: Box::new(move |g, v| {
            let mut p = model.params.map(&mut |_: &Tensor| v[0]);
            for (slot, &var) in p.leaves_mut().into_iter().zip(v) {
                *slot = var;
            }
            let xv = g.constant(x.clone());
            let out = model.forward(g, &p, xv)?;
            let ll = gmm_log_likelihood_graph(g, xv, &out.gmm)?;
            g.neg(ll)
        }),
    }
}

/// Largest error over every parameter entry of `model` on the probe set.
pub fn grad_check(model: &Model, probe_set: &Tensor, eps: f64) -> Result<f64> {
    Ok(check_probe(&model_probe(model.clone(), probe_set.clone()), eps, None)?.max_error)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResult {
    pub name: &'static str,
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_error: f64,
}

impl BlockResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Runs `probes` random probes of every registered block.
pub fn run_suite(probes: usize, seed: u64, eps: f64, fault: Option<f64>) -> Result<Vec<BlockResult>> {
    BLOCKS
        .iter()
        .map(|&name| {
            let (step, tolerance) = block_settings(name, eps);
            let mut max_error: f64 = 0.0;
            for i in 0..probes {
                let probe = block_probe(name, i, seed).expect("registered block");
                max_error = max_error.max(check_probe(&probe, step, fault)?.max_error);
            }
            Ok(BlockResult {
                name,
                probes,
                step,
                tolerance,
                max_error,
            })
        })
        .collect()
}
