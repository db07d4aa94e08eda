use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Categorized command failures; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing upstream artifact {path}: run `fgaif {command}` first")]
    MissingArtifact { path: PathBuf, command: String },
    #[error("artifact {path} does not match its manifest (expected sha256 {expected}, found {found}); rerun `fgaif {command}`")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
        command: String,
    },
    #[error("remote annotator: {0}")]
    Remote(String),
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] fgaif_core::Error),
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => 3,
            CliError::Remote(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Core(fgaif_core::Error::Config(_) | fgaif_core::Error::UnknownVariant { .. }) => 2,
            CliError::Core(_) => 6,
            CliError::Plot(_) => 7,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<fgaif_annotator::AnnotatorError> for CliError {
    fn from(e: fgaif_annotator::AnnotatorError) -> Self {
        CliError::Remote(e.to_string())
    }
}
