//! Versioned JSON checkpoints.
//!
//! Every array is stored by name with its shape and row-major data. Floats use
//! shortest round-trip formatting, so loading reproduces the parameters bit
//! for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Tensor, TensorError};

use super::config::ModelConfig;
use super::model::{build_model, Model};
use super::train::{EpochRecord, Trainer};

pub const CHECKPOINT_FORMAT: &str = "picaso-checkpoint";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub m: Vec<NamedArray>,
    pub v: Vec<NamedArray>,
}

/// The shuffle stream for epoch `e` is derived from `(seed, "shuffle/e")`, so
/// the root seed and the next epoch index pin it down completely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schema_version: u32,
    pub model_config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    pub params: Vec<NamedArray>,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub lr_halved: bool,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn named(names: &[String], tensors: &[&Tensor]) -> Vec<NamedArray> {
    names
        .iter()
        .zip(tensors)
        .map(|(name, t)| NamedArray {
            name: name.clone(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

/// Matches stored arrays to `expected` by name and shape.
fn restore(
    what: &str,
    stored: &[NamedArray],
    expected: &[(String, Vec<usize>)],
) -> Result<Vec<Tensor>, CheckpointError> {
    let mut by_name: BTreeMap<&str, &NamedArray> = BTreeMap::new();
    for a in stored {
        if by_name.insert(&a.name, a).is_some() {
            return Err(CheckpointError::Format(format!("{what}: duplicate array `{}`", a.name)));
        }
    }
    if by_name.len() != expected.len() {
        return Err(CheckpointError::Format(format!(
            "{what}: expected {} arrays, found {}",
            expected.len(),
            by_name.len()
        )));
    }
    expected
        .iter()
        .map(|(name, shape)| {
            let a = by_name
                .get(name.as_str())
                .ok_or_else(|| CheckpointError::Format(format!("{what}: missing array `{name}`")))?;
            if &a.shape != shape {
                return Err(CheckpointError::Format(format!(
                    "{what}: `{name}` has shape {:?}, model expects {:?}",
                    a.shape, shape
                )));
            }
            Ok(Tensor::new(a.shape.clone(), a.data.clone())?)
        })
        .collect()
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, run_config: Option<serde_json::Value>) -> Self {
        let pairs = t.model.params.named();
        let names: Vec<String> = pairs.iter().map(|(n, _)| n.clone()).collect();
        let params: Vec<&Tensor> = pairs.iter().map(|(_, p)| *p).collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model_config: t.model.config.clone(),
            run_config,
            params: named(&names, &params),
            optimizer: OptimizerState {
                config: t.adam.config,
                step_count: t.adam.step_count,
                m: named(&names, &t.adam.m.iter().collect::<Vec<_>>()),
                v: named(&names, &t.adam.v.iter().collect::<Vec<_>>()),
            },
            rng: RngState {
                seed: t.seed,
                next_epoch: t.epoch,
            },
            step: t.adam.step_count,
            lr_halved: t.lr_halved,
            history: t.history.clone(),
        }
    }

    /// Rebuilds the trainer: the model skeleton comes from the stored config,
    /// then every array is overwritten by name.
    pub fn to_trainer(&self) -> Result<Trainer, CheckpointError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(format!("unknown format tag `{}`", self.format)));
        }
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        let mut model: Model = build_model(&self.model_config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let params = restore("params", &self.params, &expected)?;
        for (slot, value) in model.params.leaves_mut().into_iter().zip(params) {
            *slot = value;
        }
        let adam = AdamState {
            step_count: self.optimizer.step_count,
            m: restore("optimizer.m", &self.optimizer.m, &expected)?,
            v: restore("optimizer.v", &self.optimizer.v, &expected)?,
            config: self.optimizer.config,
        };
        Ok(Trainer {
            model,
            adam,
            seed: self.rng.seed,
            epoch: self.rng.next_epoch,
            lr_halved: self.lr_halved,
            history: self.history.clone(),
        })
    }

    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        Ok(self.to_trainer()?.model)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_reader(input)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![];
        self.write(&mut buf).expect("writing to memory");
        buf
    }
}
