//! Error categories with stable process exit codes.

use mmsurv_core::data::DataError;
use mmsurv_core::metrics::MetricError;
use mmsurv_core::tensor::TensorError;
use mmsurv_core::train::TrainError;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_RESOURCE: i32 = 5;
/// Stratification degenerated (all risks equal); distinct from any crash.
pub const EXIT_DEGENERATE: i32 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    DataFormat(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("resource error: {0}")]
    Resource(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::DataFormat(_) => EXIT_DATA_FORMAT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Resource(_) => EXIT_RESOURCE,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match &e {
            DataError::Config(_) => CliError::Config(e.to_string()),
            DataError::Io { .. } => CliError::Resource(e.to_string()),
            DataError::Tensor(_) => CliError::Numeric(e.to_string()),
            _ => CliError::DataFormat(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match &e {
            TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Tensor(t) => t.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Metric(m) => m.into(),
            TrainError::NumericAbort { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<mmsurv_bench::BenchError> for CliError {
    fn from(e: mmsurv_bench::BenchError) -> Self {
        match &e {
            mmsurv_bench::BenchError::Resource { .. } => CliError::Resource(e.to_string()),
            mmsurv_bench::BenchError::Tensor(_) => CliError::Numeric(e.to_string()),
            mmsurv_bench::BenchError::Io(_) => CliError::Resource(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Resource(e.to_string())
    }
}
