//! Hallucination injection into faithful captions.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::facts::Category;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

use super::caption::{parse_caption, render_clauses, Clause};
use super::scene::SceneGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionKind {
    None,
    Existence,
    Attribute,
    Relation,
}

impl InjectionKind {
    pub fn category(self) -> Option<Category> {
        match self {
            InjectionKind::None => None,
            InjectionKind::Existence => Some(Category::Existence),
            InjectionKind::Attribute => Some(Category::Attribute),
            InjectionKind::Relation => Some(Category::Relation),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "existence" => Ok(InjectionKind::Existence),
            "attribute" => Ok(InjectionKind::Attribute),
            "relation" => Ok(InjectionKind::Relation),
            other => Err(Error::Config(format!(
                "unknown hallucination type {other:?} (expected existence, attribute or relation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionEntry {
    pub kind: InjectionKind,
    /// The sub-sentence as it appears in the returned caption.
    pub span: String,
}

/// Ground truth per sub-sentence of an injected caption.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionLog {
    pub entries: Vec<InjectionEntry>,
}

impl InjectionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn corrupted(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind != InjectionKind::None)
            .count()
    }
}

fn absent_nouns<'a>(scene: &SceneGraph, vocab: &'a Vocab) -> Vec<&'a str> {
    vocab
        .nouns()
        .iter()
        .map(String::as_str)
        .filter(|n| !scene.has_noun(n))
        .collect()
}

fn foreign_attributes<'a>(
    scene: &SceneGraph,
    vocab: &'a Vocab,
    noun: &str,
    exclude: &[String],
) -> Vec<&'a str> {
    let held = scene.attributes_of(noun);
    vocab
        .attributes()
        .iter()
        .map(String::as_str)
        .filter(|a| !held.contains(a) && !exclude.iter().any(|x| x == a))
        .collect()
}

fn corrupt(
    clause: &Clause,
    kind: InjectionKind,
    scene: &SceneGraph,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Option<Clause> {
    match (clause, kind) {
        (Clause::Exists { .. }, InjectionKind::Existence) => {
            let noun = absent_nouns(scene, vocab).choose(rng)?.to_string();
            Some(Clause::Exists {
                noun,
                attributes: Vec::new(),
            })
        }
        (Clause::Exists { noun, attributes }, InjectionKind::Attribute) => {
            let pick = foreign_attributes(scene, vocab, noun, attributes)
                .choose(rng)?
                .to_string();
            let mut attrs = attributes.clone();
            if attrs.is_empty() {
                attrs.push(pick);
            } else {
                let slot = rng.random_range(0..attrs.len());
                attrs[slot] = pick;
            }
            Some(Clause::Exists {
                noun: noun.clone(),
                attributes: attrs,
            })
        }
        (Clause::Attribute { noun, .. }, InjectionKind::Attribute) => {
            let pick = foreign_attributes(scene, vocab, noun, &[])
                .choose(rng)?
                .to_string();
            Some(Clause::Attribute {
                noun: noun.clone(),
                attribute: pick,
            })
        }
        (
            Clause::Relation {
                subject,
                predicate,
                object,
            },
            InjectionKind::Relation,
        ) => {
            let present = scene.noun_triples();
            let absent = |s: &str, p: &str, o: &str| s != o && !present.contains(&(s, p, o));
            let mut candidates: Vec<(String, String, String)> = Vec::new();
            match rng.random_range(0..3) {
                0 => {
                    for p in vocab.predicates() {
                        if absent(subject, p, object) {
                            candidates.push((subject.clone(), p.clone(), object.clone()));
                        }
                    }
                }
                1 => {
                    for n in vocab.nouns() {
                        if absent(n, predicate, object) {
                            candidates.push((n.clone(), predicate.clone(), object.clone()));
                        }
                    }
                }
                _ => {
                    for n in vocab.nouns() {
                        if absent(subject, predicate, n) {
                            candidates.push((subject.clone(), predicate.clone(), n.clone()));
                        }
                    }
                }
            }
            let (s, p, o) = candidates.choose(rng)?.clone();
            Some(Clause::Relation {
                subject: s,
                predicate: p,
                object: o,
            })
        }
        _ => None,
    }
}

fn applicable(clause: &Clause, kind: InjectionKind) -> bool {
    matches!(
        (clause, kind),
        (Clause::Exists { .. }, InjectionKind::Existence)
            | (Clause::Exists { .. }, InjectionKind::Attribute)
            | (Clause::Attribute { .. }, InjectionKind::Attribute)
            | (Clause::Relation { .. }, InjectionKind::Relation)
    )
}

/// Corrupts each sub-sentence independently with probability `rate`.
///
/// A corrupted sub-sentence picks uniformly among the enabled types that
/// apply to its form. Existence corruption rewrites the sentence as
/// `there is a <absent noun> .` so that only the existence category is
/// affected; attribute and relation corruption keep the sentence shape.
pub fn inject_hallucination(
    caption: &str,
    scene: &SceneGraph,
    vocab: &Vocab,
    seed: u64,
    rate: f64,
    types: &[InjectionKind],
) -> Result<(String, InjectionLog)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "injection rate {rate} outside [0, 1]"
        )));
    }
    if types.contains(&InjectionKind::None) {
        return Err(Error::Config("\"none\" is not an injectable type".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clauses = parse_caption(caption, vocab)?;
    let mut out = Vec::with_capacity(clauses.len());
    let mut log = InjectionLog::default();
    for clause in clauses {
        let roll: f64 = rng.random();
        let mut kind = InjectionKind::None;
        let mut result = clause.clone();
        if roll < rate {
            let options: Vec<InjectionKind> = types
                .iter()
                .copied()
                .filter(|&k| applicable(&clause, k))
                .collect();
            if let Some(&k) = options.choose(&mut rng) {
                match corrupt(&clause, k, scene, vocab, &mut rng) {
                    Some(c) => {
                        kind = k;
                        result = c;
                    }
                    None => log::debug!("no valid {k:?} corruption for {:?}", clause.render()),
                }
            }
        }
        log.entries.push(InjectionEntry {
            kind,
            span: result.render(),
        });
        out.push(result);
    }
    let text = if out.is_empty() {
        caption.to_string()
    } else {
        render_clauses(&out)
    };
    Ok((text, log))
}

pub const ALL_KINDS: [InjectionKind; 3] = [
    InjectionKind::Existence,
    InjectionKind::Attribute,
    InjectionKind::Relation,
];
