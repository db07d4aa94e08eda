//! CHAIR, FaithScore-style F-scores and per-type hallucination rates,
//! all judged by the scene oracle over rule-extracted facts.

use serde::{Deserialize, Serialize};

use crate::annotate::facts::Category;
use crate::error::{Error, Result};
use crate::segment::split_response;
use crate::vocab::Vocab;
use crate::world::caption::Clause;
use crate::world::oracle::{oracle_verify, HALLUCINATED};
use crate::world::scene::SceneGraph;

/// Oracle verdicts of one sub-sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedSubSentence {
    /// False when the text does not parse under the caption grammar; such a
    /// sub-sentence is charged one hallucinated existence mention.
    pub parsed: bool,
    /// `(category, verdict)` per atomic fact.
    pub facts: Vec<(Category, u8)>,
}

impl JudgedSubSentence {
    pub fn has_facts(&self) -> bool {
        !self.facts.is_empty()
    }

    pub fn faithful(&self) -> bool {
        self.facts.iter().all(|&(_, v)| v != HALLUCINATED)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedResponse {
    pub sub_sentences: Vec<JudgedSubSentence>,
    /// Whitespace token count.
    pub length: usize,
}

impl JudgedResponse {
    /// Existence mentions and how many of them are hallucinated.
    pub fn mentions(&self) -> (usize, usize) {
        let mut total = 0;
        let mut bad = 0;
        for s in &self.sub_sentences {
            for &(c, v) in &s.facts {
                if c == Category::Existence {
                    total += 1;
                    bad += (v == HALLUCINATED) as usize;
                }
            }
        }
        (total, bad)
    }
}

/// Splits, parses and oracle-verifies one response. An empty response has
/// no sub-sentences.
pub fn judge_response(scene: &SceneGraph, response: &str, vocab: &Vocab) -> Result<JudgedResponse> {
    let length = response.split_whitespace().count();
    if response.trim().is_empty() {
        return Ok(JudgedResponse {
            sub_sentences: Vec::new(),
            length,
        });
    }
    let mut sub_sentences = Vec::new();
    for span in split_response(response)? {
        let text = span.text(response);
        match Clause::parse(text, vocab) {
            Ok(clause) => {
                let facts = clause.facts();
                let mut judged = Vec::new();
                for c in Category::ALL {
                    for f in facts.get(c) {
                        judged.push((c, oracle_verify(scene, f, vocab)?));
                    }
                }
                sub_sentences.push(JudgedSubSentence {
                    parsed: true,
                    facts: judged,
                });
            }
            Err(e) => {
                log::debug!("unparseable sub-sentence {text:?}: {e}");
                sub_sentences.push(JudgedSubSentence {
                    parsed: false,
                    facts: vec![(Category::Existence, HALLUCINATED)],
                });
            }
        }
    }
    Ok(JudgedResponse {
        sub_sentences,
        length,
    })
}

pub fn judge_all(items: &[(&SceneGraph, &str)], vocab: &Vocab) -> Result<Vec<JudgedResponse>> {
    if items.is_empty() {
        return Err(Error::Validation("no responses to evaluate".into()));
    }
    items
        .iter()
        .map(|(s, r)| judge_response(s, r, vocab))
        .collect()
}

/// `(CHAIR_I, CHAIR_S)`: hallucinated mentions over all mentions, and the
/// fraction of responses with at least one hallucinated mention.
pub fn chair_scores(judged: &[JudgedResponse]) -> Result<(f64, f64)> {
    if judged.is_empty() {
        return Err(Error::Validation("no responses to evaluate".into()));
    }
    let mut total = 0;
    let mut bad = 0;
    let mut bad_responses = 0;
    for r in judged {
        let (t, b) = r.mentions();
        total += t;
        bad += b;
        bad_responses += (b > 0) as usize;
    }
    let chair_i = if total > 0 {
        bad as f64 / total as f64
    } else {
        0.0
    };
    Ok((chair_i, bad_responses as f64 / judged.len() as f64))
}

/// `(F_Score, F_Score_S)`: consistent facts over all facts, and faithful
/// sub-sentences over sub-sentences that carry at least one fact.
pub fn faithscore(judged: &[JudgedResponse]) -> Result<(f64, f64)> {
    if judged.is_empty() {
        return Err(Error::Validation("no responses to evaluate".into()));
    }
    let mut facts = 0;
    let mut good = 0;
    let mut sentences = 0;
    let mut good_sentences = 0;
    for s in judged.iter().flat_map(|r| &r.sub_sentences) {
        facts += s.facts.len();
        good += s.facts.iter().filter(|&&(_, v)| v != HALLUCINATED).count();
        if s.has_facts() {
            sentences += 1;
            good_sentences += s.faithful() as usize;
        }
    }
    let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 1.0 };
    Ok((ratio(good, facts), ratio(good_sentences, sentences)))
}

/// Hallucinated facts over facts, per category; `None` when a category has
/// no facts at all.
pub fn per_type_rates(judged: &[JudgedResponse]) -> [Option<f64>; 3] {
    let mut total = [0usize; 3];
    let mut bad = [0usize; 3];
    for &(c, v) in judged
        .iter()
        .flat_map(|r| &r.sub_sentences)
        .flat_map(|s| &s.facts)
    {
        total[c.index()] += 1;
        bad[c.index()] += (v == HALLUCINATED) as usize;
    }
    std::array::from_fn(|i| (total[i] > 0).then(|| bad[i] as f64 / total[i] as f64))
}

/// Per-category fact counts `(total, hallucinated)`.
pub fn fact_counts(judged: &[JudgedResponse]) -> [(usize, usize); 3] {
    let mut out = [(0, 0); 3];
    for &(c, v) in judged
        .iter()
        .flat_map(|r| &r.sub_sentences)
        .flat_map(|s| &s.facts)
    {
        out[c.index()].0 += 1;
        out[c.index()].1 += (v == HALLUCINATED) as usize;
    }
    out
}
