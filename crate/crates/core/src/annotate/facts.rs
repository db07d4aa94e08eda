use std::fmt;

use serde::{Deserialize, Serialize};

/// Hallucination category: object existence, attribute, relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "o")]
    Existence,
    #[serde(rename = "a")]
    Attribute,
    #[serde(rename = "r")]
    Relation,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Existence, Category::Attribute, Category::Relation];

    pub fn index(self) -> usize {
        match self {
            Category::Existence => 0,
            Category::Attribute => 1,
            Category::Relation => 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Category::Existence => "o",
            Category::Attribute => "a",
            Category::Relation => "r",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "o" => Some(Category::Existence),
            "a" => Some(Category::Attribute),
            "r" => Some(Category::Relation),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Existence => "existence",
            Category::Attribute => "attribute",
            Category::Relation => "relation",
        })
    }
}

/// Canonical content of a fact; the variant fixes which fields exist.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Canonical {
    Existence {
        noun: String,
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

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicFact {
    pub canonical: Canonical,
    pub surface: String,
}

impl AtomicFact {
    pub fn existence(noun: &str) -> Self {
        Self {
            surface: format!("There is a {noun}."),
            canonical: Canonical::Existence { noun: noun.into() },
        }
    }

    pub fn attribute(noun: &str, attribute: &str) -> Self {
        Self {
            surface: format!("The {noun} is {attribute}."),
            canonical: Canonical::Attribute {
                noun: noun.into(),
                attribute: attribute.into(),
            },
        }
    }

    pub fn relation(subject: &str, predicate: &str, object: &str) -> Self {
        Self {
            surface: format!("The {subject} is {predicate} the {object}."),
            canonical: Canonical::Relation {
                subject: subject.into(),
                predicate: predicate.into(),
                object: object.into(),
            },
        }
    }

    pub fn category(&self) -> Category {
        match self.canonical {
            Canonical::Existence { .. } => Category::Existence,
            Canonical::Attribute { .. } => Category::Attribute,
            Canonical::Relation { .. } => Category::Relation,
        }
    }

    /// Canonical fields are non-empty for the fact's category.
    pub fn is_well_formed(&self) -> bool {
        match &self.canonical {
            Canonical::Existence { noun } => !noun.is_empty(),
            Canonical::Attribute { noun, attribute } => !noun.is_empty() && !attribute.is_empty(),
            Canonical::Relation {
                subject,
                predicate,
                object,
            } => !subject.is_empty() && !predicate.is_empty() && !object.is_empty(),
        }
    }
}

/// Facts of one sub-sentence, bucketed by category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedFacts {
    pub existence: Vec<AtomicFact>,
    pub attribute: Vec<AtomicFact>,
    pub relation: Vec<AtomicFact>,
}

impl ExtractedFacts {
    pub fn get(&self, category: Category) -> &[AtomicFact] {
        match category {
            Category::Existence => &self.existence,
            Category::Attribute => &self.attribute,
            Category::Relation => &self.relation,
        }
    }

    pub fn push(&mut self, fact: AtomicFact) {
        match fact.category() {
            Category::Existence => self.existence.push(fact),
            Category::Attribute => self.attribute.push(fact),
            Category::Relation => self.relation.push(fact),
        }
    }

    pub fn len(&self) -> usize {
        self.existence.len() + self.attribute.len() + self.relation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &AtomicFact> {
        self.existence
            .iter()
            .chain(self.attribute.iter())
            .chain(self.relation.iter())
    }
}
