use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocab;
use crate::world::oracle::{oracle_verify, CONSISTENT, HALLUCINATED};
use crate::world::scene::SceneGraph;

use super::facts::AtomicFact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub fact: AtomicFact,
    /// 0 consistent, 1 hallucinated.
    pub label: u8,
    pub source: VerdictSource,
}

pub trait FactVerifier {
    fn source(&self) -> VerdictSource;

    fn verify(&self, scene: &SceneGraph, fact: &AtomicFact) -> Result<u8>;

    /// Batched form; results keep the request order.
    fn verify_batch(&self, requests: &[(&SceneGraph, &AtomicFact)]) -> Vec<Result<u8>> {
        requests.iter().map(|(s, f)| self.verify(s, f)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct OracleVerifier {
    vocab: Vocab,
}

impl OracleVerifier {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }
}

impl FactVerifier for OracleVerifier {
    fn source(&self) -> VerdictSource {
        VerdictSource::Oracle
    }

    fn verify(&self, scene: &SceneGraph, fact: &AtomicFact) -> Result<u8> {
        oracle_verify(scene, fact, &self.vocab)
    }
}

pub fn verify_fact(
    verifier: &dyn FactVerifier,
    scene: &SceneGraph,
    fact: &AtomicFact,
) -> Result<FactVerdict> {
    Ok(FactVerdict {
        fact: fact.clone(),
        label: verifier.verify(scene, fact)?,
        source: verifier.source(),
    })
}

/// Reads the first alphabetic token of a reply: "yes" is consistent, "no"
/// is hallucinated, anything else is an error.
pub fn parse_yes_no(reply: &str) -> Result<u8> {
    let word: String = reply
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect();
    match word.to_lowercase().as_str() {
        "yes" => Ok(CONSISTENT),
        "no" => Ok(HALLUCINATED),
        _ => Err(Error::Verdict(reply.to_string())),
    }
}
