//! Adam on the negated batch log-likelihood.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mog::{sample_set, MogConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::seed::rng_for;
use crate::tensor::{Tensor, TensorError};

use super::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Generated training sets; rounded down to whole batches.
    pub train_sets: usize,
    /// Inclusive set-size range for generated training sets; the data
    /// section's range when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_sizes: Option<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 10,
            lr: 1e-3,
            train_sets: 5000,
            set_sizes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.batch_size == 0 || self.train_sets < self.batch_size {
            return Err(TensorError::Invalid(format!(
                "need batch_size ≥ 1 and train_sets ≥ batch_size (got {} and {})",
                self.batch_size, self.train_sets
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TensorError::Invalid(format!(
                "lr must be finite and ≥ 0, got {}",
                self.lr
            )));
        }
        if let Some((lo, hi)) = self.set_sizes {
            if lo == 0 || lo > hi {
                return Err(TensorError::Invalid(format!(
                    "set_sizes must satisfy 1 ≤ min ≤ max, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn num_batches(&self) -> usize {
        self.train_sets / self.batch_size
    }
}

/// Training sets grouped into batches that share one set size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainData {
    pub batches: Vec<Vec<Tensor>>,
}

impl TrainData {
    /// Batch `b` draws its size from stream `train-batch/b`; the `i`-th set
    /// overall draws its content from stream `train-set/i`.
    pub fn generate(mog: &MogConfig, train: &TrainConfig, seed: u64) -> Result<Self, TensorError> {
        train.validate()?;
        let mut mog = mog.clone();
        if let Some((lo, hi)) = train.set_sizes {
            (mog.n_min, mog.n_max) = (lo, hi);
        }
        mog.validate()?;
        let mog = &mog;
        let mut batches = Vec::with_capacity(train.num_batches());
        for b in 0..train.num_batches() {
            let n = rng_for(seed, &format!("train-batch/{b}")).random_range(mog.n_min..=mog.n_max);
            let batch = (0..train.batch_size)
                .map(|j| {
                    let i = b * train.batch_size + j;
                    sample_set(mog, n, &mut rng_for(seed, &format!("train-set/{i}"))).points
                })
                .collect();
            batches.push(batch);
        }
        Ok(Self { batches })
    }

    /// Splits a flat list of sets into consecutive batches; a short tail is kept.
    pub fn from_sets(sets: Vec<Tensor>, batch_size: usize) -> Result<Self, TensorError> {
        if sets.is_empty() || batch_size == 0 {
            return Err(TensorError::Invalid("training data must be nonempty".into()));
        }
        let mut batches = vec![];
        let mut it = sets.into_iter().peekable();
        while it.peek().is_some() {
            batches.push(it.by_ref().take(batch_size).collect());
        }
        Ok(Self { batches })
    }

    pub fn num_sets(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the pre-update batch log-likelihood.
    pub avg_ll: f64,
    pub lr: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged in epoch {epoch} after lr was halved to {lr}: {source}")]
    Diverged { epoch: usize, lr: f64, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Model plus everything needed to continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    /// Root of the per-epoch shuffle streams.
    pub seed: u64,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Whether the one permitted lr halving has been spent.
    pub lr_halved: bool,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: Model, lr: f64, seed: u64) -> Self {
        let adam = AdamState::new(
            model.params.named().into_iter().map(|(_, t)| t),
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        );
        Self {
            model,
            adam,
            seed,
            epoch: 0,
            lr_halved: false,
            history: vec![],
        }
    }

    fn batch_order(&self, num_batches: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..num_batches).collect();
        order.shuffle(&mut rng_for(self.seed, &format!("shuffle/{}", self.epoch)));
        order
    }

    fn run_epoch(&mut self, data: &TrainData) -> Result<f64, TensorError> {
        let mut total = 0.0;
        for b in self.batch_order(data.batches.len()) {
            let sets: Vec<&Tensor> = data.batches[b].iter().collect();
            let (ll, grads) = self.model.loss_and_grads(&sets)?;
            total += ll;
            let mut leaves = self.model.params.leaves_mut();
            self.adam.step(&mut leaves, &grads)?;
        }
        Ok(total / data.batches.len() as f64)
    }

    /// One pass over `data` in a seeded random batch order.
    ///
    /// A non-finite value restores the epoch's starting state, halves the
    /// learning rate and retries; a failure after the halving is fatal.
    pub fn train_epoch(&mut self, data: &TrainData) -> Result<EpochRecord, TrainError> {
        if data.batches.is_empty() {
            return Err(TensorError::Invalid("training data must be nonempty".into()).into());
        }
        let snapshot = (self.model.params.clone(), self.adam.clone());
        let avg_ll = match self.run_epoch(data) {
            Ok(ll) => ll,
            Err(e @ TensorError::NonFinite { .. }) => {
                (self.model.params, self.adam) = snapshot;
                if self.lr_halved {
                    return Err(TrainError::Diverged {
                        epoch: self.epoch,
                        lr: self.adam.config.lr,
                        source: e,
                    });
                }
                self.lr_halved = true;
                self.adam.config.lr *= 0.5;
                self.run_epoch(data).map_err(|source| TrainError::Diverged {
                    epoch: self.epoch,
                    lr: self.adam.config.lr,
                    source,
                })?
            }
            Err(e) => return Err(e.into()),
        };
        if !avg_ll.is_finite() {
            return Err(TrainError::Diverged {
                epoch: self.epoch,
                lr: self.adam.config.lr,
                source: TensorError::NonFinite {
                    op: "epoch mean",
                    node: 0,
                },
            });
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            avg_ll,
            lr: self.adam.config.lr,
        };
        self.epoch += 1;
        self.history.push(rec);
        Ok(rec)
    }

    /// Runs until `epochs` have completed in total, calling `log` after each.
    pub fn train(
        &mut self,
        data: &TrainData,
        epochs: usize,
        mut log: impl FnMut(&EpochRecord),
    ) -> Result<(), TrainError> {
        while self.epoch < epochs {
            let rec = self.train_epoch(data)?;
            log(&rec);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{build_model, EncoderKind, ModelConfig, PoolKind};

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder: EncoderKind::Rff,
            encoder_depth: 1,
            pool: PoolKind::Pb,
            steps: 2,
            d: 4,
            heads: 2,
            k: 2,
            ..ModelConfig::default()
        }
    }

    fn data() -> TrainData {
        let mog = MogConfig {
            k: 2,
            n_min: 5,
            n_max: 8,
            ..MogConfig::default()
        };
        let tc = TrainConfig {
            train_sets: 6,
            batch_size: 3,
            ..TrainConfig::default()
        };
        TrainData::generate(&mog, &tc, 4).unwrap()
    }

    #[test]
    fn batches_share_a_size() {
        let d = data();
        assert_eq!(d.batches.len(), 2);
        for b in &d.batches {
            assert!(b.iter().all(|x| x.rows() == b[0].rows()));
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let model = build_model(&tiny(), 1).unwrap();
        let mut t = Trainer::new(model.clone(), 0.0, 2);
        t.train(&data(), 3, |_| {}).unwrap();
        assert_eq!(t.model.params, model.params);
        assert_eq!(t.history.len(), 3);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut t = Trainer::new(build_model(&tiny(), 1).unwrap(), 1e-2, 2);
            t.train(&data(), 2, |_| {}).unwrap();
            t
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_empty_data() {
        let mut t = Trainer::new(build_model(&tiny(), 1).unwrap(), 1e-2, 2);
        assert!(t.train_epoch(&TrainData::default()).is_err());
    }
}
