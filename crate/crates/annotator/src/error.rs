use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AnnotatorError {
    #[error("annotator configuration: {0}")]
    Config(String),

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed reply: {0}")]
    Reply(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AnnotatorError {
    /// Rate limiting, server errors and transport failures are worth another
    /// attempt; everything else fails immediately.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Http { status, .. } => *status == 429 || *status >= 500,
            Self::Transport(_) => true,
            _ => false,
        }
    }
}

impl From<AnnotatorError> for fgaif_core::Error {
    fn from(e: AnnotatorError) -> Self {
        fgaif_core::Error::Annotation(e.to_string())
    }
}

pub type AnnotatorResult<T> = std::result::Result<T, AnnotatorError>;
