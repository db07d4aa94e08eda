//! Yes/no object-presence probing and its scoring.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annotate::verify::parse_yes_no;
use crate::error::{Error, Result};
use crate::vocab::Vocab;
use crate::world::caption::Clause;
use crate::world::oracle::CONSISTENT;
use crate::world::pope::{noun_of_question, Answer, PopeMode, PopeQuestion};
use crate::world::scene::SceneGraph;

/// Maps a question about a scene to a free-text reply.
pub trait PopeAnswerer {
    fn name(&self) -> &str;
    fn answer(&self, question: &str, scene: &SceneGraph) -> Result<String>;
}

/// Reads the scene itself.
pub struct OracleAnswerer;

impl PopeAnswerer for OracleAnswerer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn answer(&self, question: &str, scene: &SceneGraph) -> Result<String> {
        let noun = noun_of_question(question)
            .ok_or_else(|| Error::Validation(format!("not a presence question: {question:?}")))?;
        Ok(if scene.has_noun(noun) { "Yes" } else { "No" }.into())
    }
}

pub struct AlwaysYes;

impl PopeAnswerer for AlwaysYes {
    fn name(&self) -> &str {
        "always-yes"
    }

    fn answer(&self, _: &str, _: &SceneGraph) -> Result<String> {
        Ok("Yes".into())
    }
}

/// Answers from a caption the model wrote for the scene: "Yes" iff the
/// caption asserts the noun exists.
pub struct CaptionAnswerer {
    name: String,
    mentioned: HashMap<String, Vec<String>>,
}

impl CaptionAnswerer {
    /// `captions` pairs scene ids with generated text.
    pub fn new(name: &str, captions: &[(String, String)], vocab: &Vocab) -> Self {
        let mentioned = captions
            .iter()
            .map(|(id, text)| {
                let nouns = text
                    .split_inclusive(['.', ',', ';'])
                    .filter_map(|c| Clause::parse(c.trim(), vocab).ok())
                    .filter_map(|c| match c {
                        Clause::Exists { noun, .. } => Some(noun),
                        _ => None,
                    })
                    .collect();
                (id.clone(), nouns)
            })
            .collect();
        Self {
            name: name.into(),
            mentioned,
        }
    }
}

impl PopeAnswerer for CaptionAnswerer {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer(&self, question: &str, scene: &SceneGraph) -> Result<String> {
        let noun = noun_of_question(question)
            .ok_or_else(|| Error::Validation(format!("not a presence question: {question:?}")))?;
        let nouns = self.mentioned.get(&scene.scene_id).ok_or_else(|| {
            Error::Validation(format!("no caption for scene {}", scene.scene_id))
        })?;
        Ok(if nouns.iter().any(|n| n == noun) { "Yes" } else { "No" }.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeScore {
    pub mode: PopeMode,
    pub questions: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_ratio: f64,
    /// Replies that were neither yes nor no; scored as wrong.
    pub unparsed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeReport {
    pub answerer: String,
    pub modes: Vec<PopeScore>,
    pub overall_f1: f64,
}

/// Confusion counts with "Yes" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub unparsed_yes: usize,
    pub unparsed_no: usize,
}

impl Confusion {
    pub fn add(&mut self, gold: Answer, predicted: Option<Answer>) {
        match (gold, predicted) {
            (Answer::Yes, Some(Answer::Yes)) => self.tp += 1,
            (Answer::No, Some(Answer::Yes)) => self.fp += 1,
            (Answer::No, Some(Answer::No)) => self.tn += 1,
            (Answer::Yes, Some(Answer::No)) => self.fn_ += 1,
            (Answer::Yes, None) => self.unparsed_yes += 1,
            (Answer::No, None) => self.unparsed_no += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.unparsed_yes + self.unparsed_no
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Unparsed replies to "Yes" questions count as missed positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_ + self.unparsed_yes)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn yes_ratio(&self) -> f64 {
        ratio(self.tp + self.fp, self.total())
    }

    fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
        self.unparsed_yes += o.unparsed_yes;
        self.unparsed_no += o.unparsed_no;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b > 0 {
        a as f64 / b as f64
    } else {
        0.0
    }
}

/// Scores `answerer` on per-mode question sets.
pub fn pope_eval(
    answerer: &dyn PopeAnswerer,
    sets: &[(PopeMode, Vec<PopeQuestion>)],
    scenes: &[SceneGraph],
) -> Result<PopeReport> {
    let by_id: HashMap<&str, &SceneGraph> =
        scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect();
    let mut overall = Confusion::default();
    let mut modes = Vec::with_capacity(sets.len());
    for (mode, questions) in sets {
        let mut c = Confusion::default();
        for q in questions {
            let scene = by_id.get(q.scene_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("question refers to unknown scene {}", q.scene_id))
            })?;
            let reply = answerer.answer(&q.question, scene)?;
            let predicted = match parse_yes_no(&reply) {
                Ok(v) if v == CONSISTENT => Some(Answer::Yes),
                Ok(_) => Some(Answer::No),
                Err(_) => {
                    log::warn!("unparsed POPE reply {reply:?} to {:?}", q.question);
                    None
                }
            };
            c.add(q.answer, predicted);
        }
        overall.merge(&c);
        modes.push(PopeScore {
            mode: *mode,
            questions: c.total(),
            accuracy: c.accuracy(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            yes_ratio: c.yes_ratio(),
            unparsed: c.unparsed_yes + c.unparsed_no,
        });
    }
    Ok(PopeReport {
        answerer: answerer.name().into(),
        modes,
        overall_f1: overall.f1(),
    })
}
