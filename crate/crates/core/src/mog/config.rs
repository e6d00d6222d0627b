use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

/// Generator settings for 2-D Gaussian-mixture sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MogConfig {
    /// Number of mixture components.
    pub k: usize,
    /// Inclusive set-size range.
    pub n_min: usize,
    pub n_max: usize,
    /// Per-coordinate range of component means.
    pub mu_min: f64,
    pub mu_max: f64,
    /// Isotropic standard deviation shared by every component.
    pub sigma: f64,
}

pub const DIMS: usize = 2;

impl Default for MogConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n_min: 300,
            n_max: 600,
            mu_min: -4.0,
            mu_max: 4.0,
            sigma: 0.3,
        }
    }
}

impl MogConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let fail = |m: String| Err(TensorError::Invalid(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.n_min < self.k || self.n_max < self.n_min {
            return fail(format!(
                "set-size range [{}, {}] must satisfy k ≤ n_min ≤ n_max (k = {})",
                self.n_min, self.n_max, self.k
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.mu_min.is_finite() && self.mu_max.is_finite() && self.mu_min <= self.mu_max) {
            return fail(format!("invalid mean range [{}, {}]", self.mu_min, self.mu_max));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        MogConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad_n = MogConfig {
            n_min: 2,
            ..MogConfig::default()
        };
        assert!(bad_n.validate().is_err());
        let bad_sigma = MogConfig {
            sigma: 0.0,
            ..MogConfig::default()
        };
        assert!(bad_sigma.validate().is_err());
    }
}
