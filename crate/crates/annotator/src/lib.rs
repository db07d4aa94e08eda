//! Chat-completion clients for remote fact extraction and verification.
//!
//! [`RemoteClient`] posts prompts to an HTTP endpoint with bounded
//! concurrency, retries transient failures with exponential backoff and
//! caches replies by a hash of the filled prompt and image reference.
//! [`RemoteExtractor`] and [`RemoteVerifier`] plug it into the annotation
//! pipeline of `fgaif-core`.

mod client;
mod error;
mod remote;

pub use client::{reply_text, request_body, AnnotatorConfig, ChatRequest, RemoteClient, URL_ENV, KEY_ENV, MODEL_ENV};
pub use error::{AnnotatorError, AnnotatorResult};
pub use remote::{RemoteExtractor, RemoteVerifier};
