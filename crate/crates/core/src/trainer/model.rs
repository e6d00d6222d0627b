//! Encoder stack → pooling → optional template self-attention → mixture head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::mog::head::HEAD_OUTPUTS;
use crate::mog::{gmm_log_likelihood_graph, mog_head_graph, GmmParams, GmmVars};
use crate::set_ops::params::{xavier_bound, MAB_FIELDS};
use crate::set_ops::{self, AttentionRecord, MabParams, Templates};
use crate::tensor::{Result, Tensor, TensorError};

use super::config::{EncoderKind, ModelConfig, PoolKind};

/// Factor applied to the head's scale and logit weights at initialization.
pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLayer<T = Tensor> {
    Rff {
        w: T,
        b: T,
    },
    Sab(MabParams<T>),
    Ae {
        inducing: T,
        mab_in: MabParams<T>,
        mab_out: MabParams<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoolParams<T = Tensor> {
    /// Mean/max pooling followed by a linear decoder `d → k·d`.
    Deep { dec_w: T, dec_b: T },
    /// Shared by `pma` and `pb`; they differ only in cascade length.
    Picaso { templates: T, mab: MabParams<T> },
    Generalized {
        templates: T,
        mab_t: MabParams<T>,
        mab_x: MabParams<T>,
    },
}

/// Every learnable array of a model, in a fixed traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embed_w: T,
    pub embed_b: T,
    pub encoder: Vec<EncoderLayer<T>>,
    pub pool: PoolParams<T>,
    pub post_sa: Option<MabParams<T>>,
    pub head_w: T,
    pub head_b: T,
}

fn push_mab<'a, T>(out: &mut Vec<(String, &'a T)>, prefix: &str, p: &'a MabParams<T>) {
    for (name, leaf) in MAB_FIELDS.iter().zip(p.leaves()) {
        out.push((format!("{prefix}.{name}"), leaf));
    }
}

impl<T> ModelParams<T> {
    /// `(name, leaf)` pairs in traversal order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("embed.w".to_string(), &self.embed_w),
            ("embed.b".to_string(), &self.embed_b),
        ];
        for (i, layer) in self.encoder.iter().enumerate() {
            match layer {
                EncoderLayer::Rff { w, b } => {
                    out.push((format!("encoder.{i}.rff.w"), w));
                    out.push((format!("encoder.{i}.rff.b"), b));
                }
                EncoderLayer::Sab(p) => push_mab(&mut out, &format!("encoder.{i}.sab"), p),
                EncoderLayer::Ae {
                    inducing,
                    mab_in,
                    mab_out,
                } => {
                    out.push((format!("encoder.{i}.ae.inducing"), inducing));
                    push_mab(&mut out, &format!("encoder.{i}.ae.mab_in"), mab_in);
                    push_mab(&mut out, &format!("encoder.{i}.ae.mab_out"), mab_out);
                }
            }
        }
        match &self.pool {
            PoolParams::Deep { dec_w, dec_b } => {
                out.push(("pool.decoder.w".to_string(), dec_w));
                out.push(("pool.decoder.b".to_string(), dec_b));
            }
            PoolParams::Picaso { templates, mab } => {
                out.push(("pool.templates".to_string(), templates));
                push_mab(&mut out, "pool.mab", mab);
            }
            PoolParams::Generalized {
                templates,
                mab_t,
                mab_x,
            } => {
                out.push(("pool.templates".to_string(), templates));
                push_mab(&mut out, "pool.mab_t", mab_t);
                push_mab(&mut out, "pool.mab_x", mab_x);
            }
        }
        if let Some(p) = &self.post_sa {
            push_mab(&mut out, "post_sa", p);
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    /// Mutable leaves in the same order as [`ModelParams::named`].
    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b];
        for layer in &mut self.encoder {
            match layer {
                EncoderLayer::Rff { w, b } => out.extend([w, b]),
                EncoderLayer::Sab(p) => out.extend(p.leaves_mut()),
                EncoderLayer::Ae {
                    inducing,
                    mab_in,
                    mab_out,
                } => {
                    out.push(inducing);
                    out.extend(mab_in.leaves_mut());
                    out.extend(mab_out.leaves_mut());
                }
            }
        }
        match &mut self.pool {
            PoolParams::Deep { dec_w, dec_b } => out.extend([dec_w, dec_b]),
            PoolParams::Picaso { templates, mab } => {
                out.push(templates);
                out.extend(mab.leaves_mut());
            }
            PoolParams::Generalized {
                templates,
                mab_t,
                mab_x,
            } => {
                out.push(templates);
                out.extend(mab_t.leaves_mut());
                out.extend(mab_x.leaves_mut());
            }
        }
        if let Some(p) = &mut self.post_sa {
            out.extend(p.leaves_mut());
        }
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            embed_w: f(&self.embed_w),
            embed_b: f(&self.embed_b),
            encoder: self
                .encoder
                .iter()
                .map(|layer| match layer {
                    EncoderLayer::Rff { w, b } => EncoderLayer::Rff { w: f(w), b: f(b) },
                    EncoderLayer::Sab(p) => EncoderLayer::Sab(p.map(&mut *f)),
                    EncoderLayer::Ae {
                        inducing,
                        mab_in,
                        mab_out,
                    } => EncoderLayer::Ae {
                        inducing: f(inducing),
                        mab_in: mab_in.map(&mut *f),
                        mab_out: mab_out.map(&mut *f),
                    },
                })
                .collect(),
            pool: match &self.pool {
                PoolParams::Deep { dec_w, dec_b } => PoolParams::Deep {
                    dec_w: f(dec_w),
                    dec_b: f(dec_b),
                },
                PoolParams::Picaso { templates, mab } => PoolParams::Picaso {
                    templates: f(templates),
                    mab: mab.map(&mut *f),
                },
                PoolParams::Generalized {
                    templates,
                    mab_t,
                    mab_x,
                } => PoolParams::Generalized {
                    templates: f(templates),
                    mab_t: mab_t.map(&mut *f),
                    mab_x: mab_x.map(&mut *f),
                },
            },
            post_sa: self.post_sa.as_ref().map(|p| p.map(&mut *f)),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }
}

impl ModelParams<Tensor> {
    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph, tracked: bool) -> ModelParams<Var> {
        self.map(&mut |t: &Tensor| {
            if tracked {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `k×d` pooled templates fed to the head.
    pub templates: Var,
    pub gmm: GmmVars,
    /// Per cascade step, per head template-update weights (empty for mean/max).
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub templates: Tensor,
    pub gmm: GmmParams,
    pub attention: Vec<AttentionRecord>,
}

fn linear<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> (Tensor, Tensor) {
    (
        Tensor::uniform(rows, cols, xavier_bound(rows, cols), rng),
        Tensor::zeros(1, cols),
    )
}

/// Xavier head whose scale and logit columns are shrunk, with a scale bias of
/// `softplus(b) = 1`: an untrained model predicts roughly unit-σ, evenly
/// weighted components.
fn head_init<R: rand::Rng>(d: usize, rng: &mut R) -> (Tensor, Tensor) {
    let (mut w, mut b) = linear(d, HEAD_OUTPUTS, rng);
    for row in w.data_mut().chunks_mut(HEAD_OUTPUTS) {
        row[2] *= HEAD_INIT_SCALE;
        row[3] *= HEAD_INIT_SCALE;
    }
    b.data_mut()[2] = (std::f64::consts::E - 1.0).ln();
    (w, b)
}

/// Deterministic initialization from `seed`. Arrays are drawn in traversal order.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, h, k) = (config.d, config.heads, config.k);
    let (embed_w, embed_b) = linear(config.input_dim, d, &mut rng);
    let mut encoder = Vec::with_capacity(config.encoder_depth);
    for _ in 0..config.encoder_depth {
        encoder.push(match config.encoder {
            EncoderKind::Rff => {
                let (w, b) = linear(d, d, &mut rng);
                EncoderLayer::Rff { w, b }
            }
            EncoderKind::Sa => EncoderLayer::Sab(MabParams::init(d, h, &mut rng)?),
            EncoderKind::Ae(m) => EncoderLayer::Ae {
                inducing: Templates::init(m, d, &mut rng)?.matrix,
                mab_in: MabParams::init(d, h, &mut rng)?,
                mab_out: MabParams::init(d, h, &mut rng)?,
            },
        });
    }
    let pool = match config.pool {
        PoolKind::Mean | PoolKind::Max => {
            let (dec_w, dec_b) = linear(d, k * d, &mut rng);
            PoolParams::Deep { dec_w, dec_b }
        }
        PoolKind::Pma | PoolKind::Pb => PoolParams::Picaso {
            templates: Templates::init(k, d, &mut rng)?.matrix,
            mab: MabParams::init(d, h, &mut rng)?,
        },
        PoolKind::Gpb => PoolParams::Generalized {
            templates: Templates::init(k, d, &mut rng)?.matrix,
            mab_t: MabParams::init(d, h, &mut rng)?,
            mab_x: MabParams::init(d, h, &mut rng)?,
        },
    };
    let post_sa = if config.post_sa {
        Some(MabParams::init(d, h, &mut rng)?)
    } else {
        None
    };
    let (head_w, head_b) = head_init(d, &mut rng);
    Ok(Model {
        config: config.clone(),
        params: ModelParams {
            embed_w,
            embed_b,
            encoder,
            pool,
            post_sa,
            head_w,
            head_b,
        },
    })
}

impl Model {
    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    /// Encoded set, `n×d`.
    pub fn encode(&self, g: &mut Graph, p: &ModelParams<Var>, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.config.input_dim {
            return Err(TensorError::ShapeMismatch {
                op: "model input",
                lhs: g.shape(x).to_vec(),
                rhs: vec![self.config.input_dim],
            });
        }
        let lin = g.matmul(x, p.embed_w)?;
        let mut h = g.add_row(lin, p.embed_b)?;
        for layer in &p.encoder {
            h = match layer {
                EncoderLayer::Rff { w, b } => set_ops::rff(g, h, *w, *b)?,
                EncoderLayer::Sab(m) => set_ops::sab(g, h, m)?,
                EncoderLayer::Ae {
                    inducing,
                    mab_in,
                    mab_out,
                } => set_ops::ae_block(g, h, *inducing, mab_in, mab_out)?,
            };
        }
        Ok(h)
    }

    /// Pooled `k×d` templates and the attention handles of the pooling cascade.
    pub fn pool(&self, g: &mut Graph, p: &ModelParams<Var>, h: Var) -> Result<(Var, Vec<Vec<Var>>)> {
        let (k, d) = (self.config.k, self.config.d);
        let (mut t, attention) = match (&p.pool, self.config.pool) {
            (PoolParams::Deep { dec_w, dec_b }, kind @ (PoolKind::Mean | PoolKind::Max)) => {
                let pooled = if kind == PoolKind::Mean {
                    set_ops::pool_mean(g, h)?
                } else {
                    set_ops::pool_max(g, h)?
                };
                let lin = g.matmul(pooled, *dec_w)?;
                let flat = g.add_row(lin, *dec_b)?;
                (g.reshape(flat, k, d)?, vec![])
            }
            (PoolParams::Picaso { templates, mab }, PoolKind::Pma | PoolKind::Pb) => {
                let c = set_ops::picaso_block(g, h, *templates, mab, self.config.cascade_steps())?;
                (c.templates, c.attention)
            }
            (
                PoolParams::Generalized {
                    templates,
                    mab_t,
                    mab_x,
                },
                PoolKind::Gpb,
            ) => {
                let c = set_ops::generalized_picaso_block(g, h, *templates, mab_t, mab_x, self.config.steps)?;
                (c.templates, c.attention)
            }
            _ => {
                return Err(TensorError::Invalid(format!(
                    "pool parameters do not match pool kind `{}`",
                    self.config.pool
                )))
            }
        };
        if let Some(sa) = &p.post_sa {
            t = set_ops::sab(g, t, sa)?;
        }
        Ok((t, attention))
    }

    pub fn forward(&self, g: &mut Graph, p: &ModelParams<Var>, x: Var) -> Result<ForwardOutput> {
        let h = self.encode(g, p, x)?;
        let (templates, attention) = self.pool(g, p, h)?;
        let gmm = mog_head_graph(g, templates, p.head_w, p.head_b)?;
        Ok(ForwardOutput {
            templates,
            gmm,
            attention,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        Ok(Prediction {
            templates: g.value(out.templates).clone(),
            gmm: out.gmm.to_params(&g),
            attention: set_ops::blocks::collect_records(&g, &out.attention),
        })
    }

    /// Mean over sets of the per-point average log-likelihood.
    pub fn avg_log_likelihood(&self, sets: &[&Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for x in sets {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            let xv = g.constant((*x).clone());
            let out = self.forward(&mut g, &p, xv)?;
            let ll = gmm_log_likelihood_graph(&mut g, xv, &out.gmm)?;
            total += g.value(ll).data()[0];
        }
        Ok(total / sets.len() as f64)
    }

    /// Batch log-likelihood and the gradient of its negation (the training
    /// loss) for every parameter, in traversal order.
    pub fn loss_and_grads(&self, sets: &[&Tensor]) -> Result<(f64, Vec<Tensor>)> {
        if sets.is_empty() {
            return Err(TensorError::Invalid("empty batch".into()));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let mut lls = Vec::with_capacity(sets.len());
        for x in sets {
            let xv = g.constant((*x).clone());
            let out = self.forward(&mut g, &p, xv)?;
            lls.push(gmm_log_likelihood_graph(&mut g, xv, &out.gmm)?);
        }
        let all = g.concat_cols(&lls)?;
        let mean_ll = g.mean(all)?;
        let loss = g.neg(mean_ll)?;
        let grads = g.backward(loss)?;
        let out = p.named().into_iter().map(|(_, v)| grads.wrt(*v).clone()).collect();
        Ok((g.value(mean_ll).data()[0], out))
    }
}
