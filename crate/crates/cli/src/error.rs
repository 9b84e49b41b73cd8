use std::process::ExitCode;

use cropknn::artifacts::ArtifactError;
use cropknn::experiments::ExperimentError;
use cropknn::synth::SynthError;
use cropknn::{BundleError, IndexError, KnnError, PreprocessError};

/// Error classes map one-to-one onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation error",
            CliError::Data(_) => "data error",
            CliError::Internal(_) => "internal error",
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::UnknownIndex(_) => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KnnError> for CliError {
    fn from(e: KnnError) -> Self {
        match e {
            KnnError::InvalidK { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidSpec(_) => CliError::Validation(e.to_string()),
            ExperimentError::Knn(k) => k.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Csv(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
