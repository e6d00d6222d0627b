//! Amortized clustering of 2-D Gaussian mixtures: data, objective, model head.

pub mod config;
pub mod data;
pub mod gmm;
pub mod head;

pub use config::{MogConfig, DIMS};
pub use data::{read_dataset, sample_mog, sample_set, write_dataset, DatasetError, DatasetHeader, MogSet, SetBatch};
pub use gmm::{assign_clusters, gmm_log_likelihood, gmm_log_likelihood_graph, shift_set, GmmParams, GmmVars};
pub use head::{mog_head, mog_head_graph, SIGMA_FLOOR};
