//! Closed vocabulary of the synthetic captioning world.
//!
//! Token ids are assigned in a fixed order (markers, keywords, separators,
//! extra terms, nouns, attributes, predicates) so that a given
//! [`VocabularyConfig`] always produces the same id table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROMPT: &str = "<prompt>";
pub const SCENE_BEGIN: &str = "<scene>";
pub const SCENE_END: &str = "</scene>";
pub const RESP_BEGIN: &str = "<resp>";
pub const RESP_END: &str = "</resp>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Sub-sentence delimiters. The period doubles as a grammar keyword.
pub const DELIMITERS: [char; 3] = ['.', ',', ';'];

/// Scene serialization: object records end with `,`, relation records with
/// `;`, and missing attribute slots are padded with `-`.
pub const OBJECT_SEP: &str = ",";
pub const RELATION_SEP: &str = ";";
pub const PAD: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyConfig {
    pub nouns: Vec<String>,
    pub attributes: Vec<String>,
    pub predicates: Vec<String>,
    pub keywords: Vec<String>,
    /// Words of the fixed sampling prompt.
    pub extra_terms: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        Self {
            nouns: strings(&[
                "dog", "cat", "ball", "table", "chair", "cup", "book", "lamp", "car", "tree",
                "bird", "horse", "man", "woman", "bench", "kite", "phone", "bag", "bottle",
                "clock",
            ]),
            attributes: strings(&[
                "red", "blue", "green", "yellow", "black", "white", "small", "large", "wooden",
                "striped",
            ]),
            predicates: strings(&[
                "left_of",
                "right_of",
                "on",
                "under",
                "near",
                "behind",
                "in_front_of",
                "holding",
            ]),
            keywords: strings(&["there", "is", "a", "the", "."]),
            extra_terms: strings(&["Describe", "this", "image", "in", "detail"]),
        }
    }
}

impl VocabularyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nouns.is_empty() || self.attributes.is_empty() || self.predicates.is_empty() {
            return Err(Error::Config(
                "nouns, attributes and predicates must all be non-empty".into(),
            ));
        }
        let mut seen = HashMap::new();
        for term in self.all_terms() {
            if term.is_empty() || term.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary term {term:?}")));
            }
            let lone_delimiter = term.len() == 1 && term.chars().all(|c| DELIMITERS.contains(&c));
            if !lone_delimiter && term.chars().any(|c| DELIMITERS.contains(&c)) {
                return Err(Error::Config(format!(
                    "vocabulary term {term:?} contains a sub-sentence delimiter"
                )));
            }
            if seen.insert(term.clone(), ()).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary term {term:?}")));
            }
        }
        for kw in ["there", "is", "a", "the", "."] {
            if !self.keywords.iter().any(|k| k == kw) {
                return Err(Error::Config(format!("missing grammar keyword {kw:?}")));
            }
        }
        Ok(())
    }

    fn all_terms(&self) -> Vec<String> {
        let mut out: Vec<String> = [
            PROMPT,
            SCENE_BEGIN,
            SCENE_END,
            RESP_BEGIN,
            RESP_END,
            EOS,
            UNK,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        out.extend(self.keywords.iter().cloned());
        out.extend(
            [OBJECT_SEP, RELATION_SEP, PAD]
                .iter()
                .map(|s| s.to_string()),
        );
        out.extend(self.extra_terms.iter().cloned());
        out.extend(self.nouns.iter().cloned());
        out.extend(self.attributes.iter().cloned());
        out.extend(self.predicates.iter().cloned());
        out
    }
}

/// Role a term plays in the synthetic grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Marker,
    Keyword,
    Separator,
    Extra,
    Noun,
    Attribute,
    Predicate,
}

/// Bidirectional term/id table built from a [`VocabularyConfig`].
#[derive(Debug, Clone)]
pub struct Vocab {
    config: VocabularyConfig,
    terms: Vec<String>,
    kinds: Vec<TermKind>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new(config: VocabularyConfig) -> Result<Self> {
        config.validate()?;
        let mut terms = Vec::new();
        let mut kinds = Vec::new();
        let mut push = |group: &[String], kind: TermKind| {
            for t in group {
                terms.push(t.clone());
                kinds.push(kind);
            }
        };
        push(
            &strings(&[
                PROMPT,
                SCENE_BEGIN,
                SCENE_END,
                RESP_BEGIN,
                RESP_END,
                EOS,
                UNK,
            ]),
            TermKind::Marker,
        );
        push(&config.keywords, TermKind::Keyword);
        push(
            &strings(&[OBJECT_SEP, RELATION_SEP, PAD]),
            TermKind::Separator,
        );
        push(&config.extra_terms, TermKind::Extra);
        push(&config.nouns, TermKind::Noun);
        push(&config.attributes, TermKind::Attribute);
        push(&config.predicates, TermKind::Predicate);
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Self {
            config,
            terms,
            kinds,
            index,
        })
    }

    pub fn config(&self) -> &VocabularyConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    /// Maps unknown terms to the reserved `<unk>` id.
    pub fn id_or_unk(&self, term: &str) -> u32 {
        self.id(term).unwrap_or_else(|| self.marker(UNK))
    }

    /// Whitespace-separated terms to ids, unknown terms as `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn marker(&self, name: &str) -> u32 {
        self.index[name]
    }

    pub fn eos(&self) -> u32 {
        self.marker(EOS)
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn kind(&self, term: &str) -> Option<TermKind> {
        self.id(term).map(|id| self.kinds[id as usize])
    }

    pub fn is_noun(&self, term: &str) -> bool {
        self.kind(term) == Some(TermKind::Noun)
    }

    pub fn is_attribute(&self, term: &str) -> bool {
        self.kind(term) == Some(TermKind::Attribute)
    }

    pub fn is_predicate(&self, term: &str) -> bool {
        self.kind(term) == Some(TermKind::Predicate)
    }

    pub fn nouns(&self) -> &[String] {
        &self.config.nouns
    }

    pub fn attributes(&self) -> &[String] {
        &self.config.attributes
    }

    pub fn predicates(&self) -> &[String] {
        &self.config.predicates
    }

    /// Id table dumped next to run manifests.
    pub fn id_table(&self) -> Vec<(u32, String)> {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, t.clone()))
            .collect()
    }
}
