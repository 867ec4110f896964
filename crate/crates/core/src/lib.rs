//! Multimodal survival modeling on patch-embedding bags: a minimal tensor
//! autodiff engine, diagonal state-space sequence blocks with input-dependent
//! selection, a two-stage cross-modal fusion trunk, a discrete-hazard
//! survival head, censored-data evaluation metrics, and the cohort data
//! plumbing needed to train and evaluate end to end.

pub mod autodiff;
pub mod data;
pub mod fusion;
pub mod gradcheck;
pub mod init;
pub mod metrics;
pub mod model;
pub mod scan_kernel;
pub mod ssm;
pub mod survival;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use model::{ModelConfig, SurvivalModel};
pub use tensor::{Tensor, TensorError};
