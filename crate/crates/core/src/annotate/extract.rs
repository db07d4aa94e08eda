//! Atomic-fact extraction: grammar inversion for the synthetic language and
//! parsing of `Object:/Attribute:/Relation:` replies from a remote model.

use crate::error::{Error, Result};
use crate::vocab::Vocab;
use crate::world::caption::Clause;

use super::facts::{AtomicFact, Canonical, Category, ExtractedFacts};

/// One extraction job: a sub-sentence and the full response it came from.
#[derive(Debug, Clone, Copy)]
pub struct ExtractRequest<'a> {
    pub sub_sentence: &'a str,
    pub context: &'a str,
}

pub trait FactExtractor {
    /// Recorded in record provenance.
    fn name(&self) -> String;

    fn extract(&self, sub_sentence: &str, context: &str) -> Result<ExtractedFacts>;

    /// Batched form; remote extractors override this to run requests
    /// concurrently. Results keep the request order.
    fn extract_batch(&self, requests: &[ExtractRequest<'_>]) -> Vec<Result<ExtractedFacts>> {
        requests
            .iter()
            .map(|r| self.extract(r.sub_sentence, r.context))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RuleBasedExtractor {
    vocab: Vocab,
}

impl RuleBasedExtractor {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }
}

impl FactExtractor for RuleBasedExtractor {
    fn name(&self) -> String {
        "rule-based".into()
    }

    fn extract(&self, sub_sentence: &str, _context: &str) -> Result<ExtractedFacts> {
        extract_facts_rule_based(sub_sentence, &self.vocab)
    }
}

pub fn extract_facts_rule_based(sub_sentence: &str, vocab: &Vocab) -> Result<ExtractedFacts> {
    Ok(Clause::parse(sub_sentence, vocab)?.facts())
}

const LINE_LABELS: [(&str, Category); 3] = [
    ("object:", Category::Existence),
    ("attribute:", Category::Attribute),
    ("relation:", Category::Relation),
];

/// Parses the three labeled lines of an extraction reply. Facts on a line
/// are separated by periods; an empty line means an empty category. A reply
/// missing any of the three labels is rejected.
pub fn parse_extraction_reply(reply: &str) -> Result<ExtractedFacts> {
    let mut lines: [Option<&str>; 3] = [None; 3];
    for line in reply.lines() {
        let trimmed = line.trim();
        let lower = trimmed.to_ascii_lowercase();
        for (label, cat) in LINE_LABELS {
            if lower.starts_with(label) && lines[cat.index()].is_none() {
                lines[cat.index()] = Some(trimmed[label.len()..].trim());
            }
        }
    }
    let mut out = ExtractedFacts::default();
    for (label, cat) in LINE_LABELS {
        let Some(body) = lines[cat.index()] else {
            return Err(Error::Annotation(format!(
                "extraction reply lacks a {:?} line: {reply:?}",
                label.trim_end_matches(':')
            )));
        };
        for piece in body.split('.') {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            out.push(canonicalize(cat, piece)?);
        }
    }
    Ok(out)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn strip_article(words: &[String]) -> &[String] {
    match words.first() {
        Some(w) if ARTICLES.contains(&w.as_str()) => &words[1..],
        _ => words,
    }
}

fn words_of(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Best-effort canonical form for free-text facts. Surface text is kept
/// verbatim so a remote verifier sees exactly what the extractor wrote.
fn canonicalize(category: Category, text: &str) -> Result<AtomicFact> {
    let surface = format!("{text}.");
    let words = words_of(text);
    let malformed = || Error::Annotation(format!("cannot read a {category} fact from {text:?}"));
    let canonical = match category {
        Category::Existence => {
            let rest = match words.as_slice() {
                [t, v, rest @ ..] if t == "there" && (v == "is" || v == "are") => rest,
                _ => &words[..],
            };
            let noun = strip_article(rest).join(" ");
            if noun.is_empty() {
                return Err(malformed());
            }
            Canonical::Existence { noun }
        }
        Category::Attribute => {
            let verb = words
                .iter()
                .position(|w| w == "is" || w == "are")
                .ok_or_else(malformed)?;
            let noun = strip_article(&words[..verb]).join(" ");
            let attribute = words[verb + 1..].join(" ");
            if noun.is_empty() || attribute.is_empty() {
                return Err(malformed());
            }
            Canonical::Attribute { noun, attribute }
        }
        Category::Relation => {
            let words = strip_article(&words);
            let (subject, rest) = match words.iter().position(|w| w == "is" || w == "are") {
                Some(v) => (&words[..v], &words[v + 1..]),
                None if words.len() > 1 => (&words[..1], &words[1..]),
                None => return Err(malformed()),
            };
            let (predicate, object) =
                match rest.iter().rposition(|w| ARTICLES.contains(&w.as_str())) {
                    Some(a) => (&rest[..a], &rest[a + 1..]),
                    None if rest.len() > 1 => (&rest[..rest.len() - 1], &rest[rest.len() - 1..]),
                    None => return Err(malformed()),
                };
            let (subject, predicate, object) =
                (subject.join(" "), predicate.join(" "), object.join(" "));
            if subject.is_empty() || predicate.is_empty() || object.is_empty() {
                return Err(malformed());
            }
            Canonical::Relation {
                subject,
                predicate,
                object,
            }
        }
    };
    Ok(AtomicFact { canonical, surface })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::VocabularyConfig;

    fn vocab() -> Vocab {
        Vocab::new(VocabularyConfig::default()).unwrap()
    }

    #[test]
    fn grammar_inversion() {
        let v = vocab();
        let f = extract_facts_rule_based("there is a red dog .", &v).unwrap();
        assert_eq!(f.existence, vec![AtomicFact::existence("dog")]);
        assert_eq!(f.attribute, vec![AtomicFact::attribute("dog", "red")]);
        assert!(f.relation.is_empty());
        let f = extract_facts_rule_based("the dog is left_of the ball .", &v).unwrap();
        assert_eq!(
            f.relation,
            vec![AtomicFact::relation("dog", "left_of", "ball")]
        );
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn unparseable_lists_offending_tokens() {
        let v = vocab();
        match extract_facts_rule_based("there is a giraffe .", &v) {
            Err(Error::Extraction { offending, .. }) => assert_eq!(offending, vec!["giraffe"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reply_with_empty_lines() {
        let reply = "Object: There is a dog.\nAttribute: The dog is red.\nRelation:";
        let f = parse_extraction_reply(reply).unwrap();
        assert_eq!(
            f.existence[0].canonical,
            Canonical::Existence { noun: "dog".into() }
        );
        assert_eq!(f.existence[0].surface, "There is a dog.");
        assert_eq!(
            f.attribute[0].canonical,
            Canonical::Attribute {
                noun: "dog".into(),
                attribute: "red".into()
            }
        );
        assert!(f.relation.is_empty());
    }

    #[test]
    fn relation_heuristics() {
        let reply = "Object:\nAttribute:\nRelation: A man is in a bow tie. A man posing for a selfie. Cows feed on hay.";
        let f = parse_extraction_reply(reply).unwrap();
        let triples: Vec<_> = f
            .relation
            .iter()
            .map(|x| match &x.canonical {
                Canonical::Relation {
                    subject,
                    predicate,
                    object,
                } => (subject.as_str(), predicate.as_str(), object.as_str()),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            triples,
            vec![
                ("man", "in", "bow tie"),
                ("man", "posing for", "selfie"),
                ("cows", "feed on", "hay"),
            ]
        );
    }

    #[test]
    fn missing_line_rejected() {
        assert!(parse_extraction_reply("Object: There is a dog.").is_err());
        assert!(parse_extraction_reply("I cannot help with that.").is_err());
    }
}
