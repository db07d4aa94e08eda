use crate::annotate::facts::{AtomicFact, Canonical};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

use super::scene::SceneGraph;

pub const CONSISTENT: u8 = 0;
pub const HALLUCINATED: u8 = 1;

/// Exact verification of one fact against the scene, at noun level.
pub fn oracle_verify(scene: &SceneGraph, fact: &AtomicFact, vocab: &Vocab) -> Result<u8> {
    let check = |ok: bool, term: &str, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "unknown {what} {term:?} in fact {:?}",
                fact.surface
            )))
        }
    };
    let holds = match &fact.canonical {
        Canonical::Existence { noun } => {
            check(vocab.is_noun(noun), noun, "noun")?;
            scene.has_noun(noun)
        }
        Canonical::Attribute { noun, attribute } => {
            check(vocab.is_noun(noun), noun, "noun")?;
            check(vocab.is_attribute(attribute), attribute, "attribute")?;
            scene.attributes_of(noun).contains(attribute.as_str())
        }
        Canonical::Relation {
            subject,
            predicate,
            object,
        } => {
            check(vocab.is_noun(subject), subject, "noun")?;
            check(vocab.is_predicate(predicate), predicate, "predicate")?;
            check(vocab.is_noun(object), object, "noun")?;
            scene
                .noun_triples()
                .contains(&(subject.as_str(), predicate.as_str(), object.as_str()))
        }
    };
    Ok(if holds { CONSISTENT } else { HALLUCINATED })
}
