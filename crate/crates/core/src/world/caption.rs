//! Caption grammar: one sub-sentence per clause, three clause forms.
//!
//! ```text
//! there is a <attr>* <noun> .
//! the <noun> is <attr> .
//! the <noun> is <predicate> the <noun> .
//! ```

use crate::annotate::facts::{AtomicFact, ExtractedFacts};
use crate::error::{Error, Result};
use crate::segment::{split_response, Tokenizer, WhitespaceTokenizer};
use crate::vocab::Vocab;

use super::scene::SceneGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Exists {
        noun: String,
        attributes: Vec<String>,
    },
    Attribute {
        noun: String,
        attribute: String,
    },
    Relation {
        subject: String,
        predicate: String,
        object: String,
    },
}

impl Clause {
    pub fn render(&self) -> String {
        match self {
            Clause::Exists { noun, attributes } => {
                let mut words = vec!["there", "is", "a"];
                words.extend(attributes.iter().map(String::as_str));
                words.push(noun);
                words.push(".");
                words.join(" ")
            }
            Clause::Attribute { noun, attribute } => format!("the {noun} is {attribute} ."),
            Clause::Relation {
                subject,
                predicate,
                object,
            } => format!("the {subject} is {predicate} the {object} ."),
        }
    }

    /// Inverts the grammar; anything outside it is an extraction error that
    /// lists the offending tokens.
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Clause> {
        let tokens = WhitespaceTokenizer.pre_tokenize(text);
        let t: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let fail = || {
            let unknown: Vec<String> = t
                .iter()
                .filter(|w| vocab.id(w).is_none())
                .map(|w| w.to_string())
                .collect();
            Err(Error::Extraction {
                text: text.to_string(),
                offending: if unknown.is_empty() {
                    tokens.clone()
                } else {
                    unknown
                },
            })
        };
        match t.as_slice() {
            ["there", "is", "a", middle @ .., noun, "."] if vocab.is_noun(noun) => {
                if middle.iter().all(|a| vocab.is_attribute(a)) {
                    Ok(Clause::Exists {
                        noun: noun.to_string(),
                        attributes: middle.iter().map(|a| a.to_string()).collect(),
                    })
                } else {
                    fail()
                }
            }
            ["the", noun, "is", attr, "."] if vocab.is_noun(noun) && vocab.is_attribute(attr) => {
                Ok(Clause::Attribute {
                    noun: noun.to_string(),
                    attribute: attr.to_string(),
                })
            }
            ["the", s, "is", p, "the", o, "."]
                if vocab.is_noun(s) && vocab.is_predicate(p) && vocab.is_noun(o) =>
            {
                Ok(Clause::Relation {
                    subject: s.to_string(),
                    predicate: p.to_string(),
                    object: o.to_string(),
                })
            }
            _ => fail(),
        }
    }

    pub fn facts(&self) -> ExtractedFacts {
        let mut out = ExtractedFacts::default();
        match self {
            Clause::Exists { noun, attributes } => {
                out.push(AtomicFact::existence(noun));
                for a in attributes {
                    out.push(AtomicFact::attribute(noun, a));
                }
            }
            Clause::Attribute { noun, attribute } => {
                out.push(AtomicFact::attribute(noun, attribute))
            }
            Clause::Relation {
                subject,
                predicate,
                object,
            } => out.push(AtomicFact::relation(subject, predicate, object)),
        }
        out
    }
}

/// Clauses of the faithful caption: every object's existence sentence,
/// then one attribute sentence per (object, attribute), then relations.
pub fn gold_clauses(scene: &SceneGraph) -> Vec<Clause> {
    let mut out = Vec::new();
    for o in &scene.objects {
        out.push(Clause::Exists {
            noun: o.noun.clone(),
            attributes: o.attributes.clone(),
        });
    }
    for o in &scene.objects {
        for a in &o.attributes {
            out.push(Clause::Attribute {
                noun: o.noun.clone(),
                attribute: a.clone(),
            });
        }
    }
    for r in &scene.relations {
        if let (Some(s), Some(o)) = (scene.object(r.subject), scene.object(r.object)) {
            out.push(Clause::Relation {
                subject: s.noun.clone(),
                predicate: r.predicate.clone(),
                object: o.noun.clone(),
            });
        }
    }
    out
}

pub fn render_clauses(clauses: &[Clause]) -> String {
    clauses
        .iter()
        .map(Clause::render)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_gold_caption(scene: &SceneGraph) -> String {
    render_clauses(&gold_clauses(scene))
}

/// Parses a whole caption into clauses, failing on the first bad sub-sentence.
pub fn parse_caption(caption: &str, vocab: &Vocab) -> Result<Vec<Clause>> {
    split_response(caption)?
        .iter()
        .map(|s| Clause::parse(s.text(caption), vocab))
        .collect()
}
