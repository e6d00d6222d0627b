//! Set-input networks built around cascaded attentional pooling.
//!
//! The crate carries its own small reverse-mode autodiff ([`autodiff`]), the
//! attention set operators ([`set_ops`]), a reference soft K-means
//! ([`kmeans`]), the Gaussian-mixture clustering task ([`mog`]), model
//! assembly and training ([`trainer`]) and the command-line front end
//! ([`cli`]).

pub mod autodiff;
pub mod cli;
pub mod kernels;
pub mod kmeans;
pub mod mog;
pub mod optim;
pub mod seed;
pub mod set_ops;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Graph, Var};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{Tensor, TensorError};
