use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

/// Element-wise encoder stacked before pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderKind {
    /// Row-wise feed-forward layers only.
    Rff,
    /// Self-attention blocks.
    Sa,
    /// Induced encoder blocks with the given number of inducing points.
    Ae(usize),
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rff" => Ok(EncoderKind::Rff),
            "sa" => Ok(EncoderKind::Sa),
            _ => match s.strip_prefix("ae").map(str::parse::<usize>) {
                Some(Ok(m)) if m > 0 => Ok(EncoderKind::Ae(m)),
                _ => Err(format!("unknown encoder `{s}` (expected rff, sa or ae<m>, e.g. ae32)")),
            },
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderKind::Rff => write!(f, "rff"),
            EncoderKind::Sa => write!(f, "sa"),
            EncoderKind::Ae(m) => write!(f, "ae{m}"),
        }
    }
}

impl TryFrom<String> for EncoderKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EncoderKind> for String {
    fn from(e: EncoderKind) -> String {
        e.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Mean,
    Max,
    /// Static attentional pooling (one MAB from the learned template).
    Pma,
    /// PICASO cascade.
    Pb,
    /// Generalized cascade that also updates the set.
    Gpb,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PoolKind::Mean => "mean",
            PoolKind::Max => "max",
            PoolKind::Pma => "pma",
            PoolKind::Pb => "pb",
            PoolKind::Gpb => "gpb",
        };
        f.write_str(s)
    }
}

impl FromStr for PoolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as clap::ValueEnum>::from_str(s, true)
            .map_err(|_| format!("unknown pool `{s}` (expected mean, max, pma, pb or gpb)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub encoder_depth: usize,
    pub pool: PoolKind,
    /// Cascade length for `pb` and `gpb`; ignored otherwise.
    pub steps: usize,
    /// Feature width.
    pub d: usize,
    pub heads: usize,
    /// Template rows, one per mixture component.
    pub k: usize,
    /// Self-attention over the pooled templates before the head.
    pub post_sa: bool,
    /// Width of the raw set elements.
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Ae(32),
            encoder_depth: 2,
            pool: PoolKind::Pb,
            steps: 2,
            d: 64,
            heads: 4,
            k: 4,
            post_sa: false,
            input_dim: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let fail = |m: String| Err(TensorError::Invalid(m));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!(
                "d = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            ));
        }
        if self.k == 0 || self.input_dim == 0 {
            return fail("k and input_dim must be positive".into());
        }
        if matches!(self.pool, PoolKind::Pb | PoolKind::Gpb) && self.steps == 0 {
            return fail(format!("pool `{}` needs steps ≥ 1", self.pool));
        }
        Ok(())
    }

    /// Number of template updates the pooling stage performs.
    pub fn cascade_steps(&self) -> usize {
        match self.pool {
            PoolKind::Pb | PoolKind::Gpb => self.steps,
            PoolKind::Pma => 1,
            PoolKind::Mean | PoolKind::Max => 0,
        }
    }
}
