//! Cohort data handling: the binary feature-bag format, the cohort manifest,
//! feature preprocessing, interval binning, weighted sampling, synthetic
//! cohort generation, and checkpoint serialization.

mod bag;
mod checkpoint;
mod manifest;
mod pipeline;
mod synth;

pub use bag::{read_feature_bag, write_feature_bag, Modality, BAG_MAGIC, BAG_VERSION};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use pipeline::{bin_times, mlp_tape, pfe_aggregate, MlpParams, MlpVars, WeightedSampler};
pub use synth::{load_case_bags, oracle_c_index, synth_generate, SynthSummary, SyntheticConfig};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {msg} (byte offset {offset})")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("{path}: truncated: expected {expected} bytes, got {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}
