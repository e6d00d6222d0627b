//! Model assembly, training, checkpoints, shift evaluation and gradient checks.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, NamedArray};
pub use config::{EncoderKind, ModelConfig, PoolKind};
pub use eval::{evaluate_shifts, parse_shifts, write_metrics_csv, Scorer, ShiftRow, DEFAULT_SHIFTS};
pub use model::{build_model, EncoderLayer, ForwardOutput, Model, ModelParams, PoolParams, Prediction};
pub use train::{EpochRecord, TrainConfig, TrainData, TrainError, Trainer};
