use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty response: nothing to split")]
    EmptyResponse,

    #[error("cannot extract facts from sub-sentence {text:?}: offending tokens {offending:?}")]
    Extraction {
        text: String,
        offending: Vec<String>,
    },

    #[error("span alignment failed at sub-sentence {index}: {detail}")]
    Alignment { index: usize, detail: String },

    #[error("verifier reply has no leading yes/no: {0:?}")]
    Verdict(String),

    #[error("annotation failed: {0}")]
    Annotation(String),

    #[error("all {total} records failed during collection: {histogram:?}")]
    Collection {
        total: usize,
        histogram: BTreeMap<String, usize>,
    },

    #[error("{path}: line {line}: {detail}")]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: schema version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("sequence of {len} tokens exceeds the configured maximum of {max}")]
    Truncation { len: usize, max: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("unknown variant {name:?}; valid variants: {valid}")]
    UnknownVariant { name: String, valid: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in failure histograms and CLI exit reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::EmptyResponse => "empty_response",
            Error::Extraction { .. } => "extraction",
            Error::Alignment { .. } => "alignment",
            Error::Verdict(_) => "verdict",
            Error::Annotation(_) => "annotation",
            Error::Collection { .. } => "collection",
            Error::Format { .. } => "format",
            Error::Schema { .. } => "schema",
            Error::Truncation { .. } => "truncation",
            Error::Contract(_) => "contract",
            Error::DegenerateData(_) => "degenerate_data",
            Error::NonFinite(_) => "non_finite",
            Error::UnknownVariant { .. } => "unknown_variant",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
