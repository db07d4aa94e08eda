//! Yes/no object-presence probes with random, popular and adversarial
//! negative sampling.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocab;

use super::scene::SceneGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopeMode {
    Random,
    Popular,
    Adversarial,
}

impl PopeMode {
    pub const ALL: [PopeMode; 3] = [PopeMode::Random, PopeMode::Popular, PopeMode::Adversarial];

    pub fn name(self) -> &'static str {
        match self {
            PopeMode::Random => "random",
            PopeMode::Popular => "popular",
            PopeMode::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeQuestion {
    pub scene_id: String,
    pub noun: String,
    pub question: String,
    pub answer: Answer,
}

/// Noun frequency and pairwise co-occurrence counts over a scene corpus,
/// indexed by noun vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub nouns: Vec<String>,
    pub frequency: Vec<u64>,
    pub cooccurrence: Vec<Vec<u64>>,
}

impl CorpusStats {
    pub fn from_scenes(scenes: &[SceneGraph], vocab: &Vocab) -> Self {
        let nouns = vocab.nouns().to_vec();
        let n = nouns.len();
        let index = |noun: &str| nouns.iter().position(|x| x == noun);
        let mut frequency = vec![0u64; n];
        let mut cooccurrence = vec![vec![0u64; n]; n];
        for s in scenes {
            let present: Vec<usize> = s.distinct_nouns().into_iter().filter_map(index).collect();
            for &i in &present {
                frequency[i] += 1;
                for &j in &present {
                    if i != j {
                        cooccurrence[i][j] += 1;
                    }
                }
            }
        }
        Self {
            nouns,
            frequency,
            cooccurrence,
        }
    }

    fn index(&self, noun: &str) -> Option<usize> {
        self.nouns.iter().position(|x| x == noun)
    }

    /// Summed co-occurrence of `noun` with the scene's present nouns.
    pub fn cooccurrence_score(&self, noun: &str, scene: &SceneGraph) -> u64 {
        let Some(j) = self.index(noun) else { return 0 };
        scene
            .distinct_nouns()
            .iter()
            .filter_map(|p| self.index(p))
            .map(|i| self.cooccurrence[i][j])
            .sum()
    }
}

pub fn question_for(noun: &str) -> String {
    format!("Is there a {noun} in the image?")
}

/// Recovers the noun from a question built by [`question_for`].
pub fn noun_of_question(question: &str) -> Option<&str> {
    question
        .strip_prefix("Is there a ")?
        .strip_suffix(" in the image?")
}

/// One "Yes" per distinct present noun and as many "No" questions as
/// absent nouns allow, picked per `mode`.
pub fn generate_pope_qa(
    scene: &SceneGraph,
    mode: PopeMode,
    stats: &CorpusStats,
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<PopeQuestion>> {
    if stats.nouns != vocab.nouns() {
        return Err(Error::Config(
            "corpus statistics were computed over a different noun vocabulary".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let present = scene.distinct_nouns();
    let mut absent: Vec<&str> = vocab
        .nouns()
        .iter()
        .map(String::as_str)
        .filter(|n| !present.contains(n))
        .collect();
    let k = present.len();
    let negatives: Vec<&str> = match mode {
        PopeMode::Random => {
            absent.shuffle(&mut rng);
            absent.into_iter().take(k).collect()
        }
        PopeMode::Popular => {
            // Stable sort keeps vocabulary order among ties.
            absent.sort_by_key(|n| std::cmp::Reverse(stats.frequency[stats.index(n).unwrap()]));
            absent.into_iter().take(k).collect()
        }
        PopeMode::Adversarial => {
            absent.sort_by_key(|n| std::cmp::Reverse(stats.cooccurrence_score(n, scene)));
            absent.into_iter().take(k).collect()
        }
    };
    if negatives.len() < k {
        log::warn!(
            "{}: only {} absent nouns for {k} negative {} questions",
            scene.scene_id,
            negatives.len(),
            mode.name()
        );
    }
    let mut qa: Vec<PopeQuestion> = present
        .iter()
        .map(|n| (n, Answer::Yes))
        .chain(negatives.iter().map(|n| (n, Answer::No)))
        .map(|(n, answer)| PopeQuestion {
            scene_id: scene.scene_id.clone(),
            noun: n.to_string(),
            question: question_for(n),
            answer,
        })
        .collect();
    qa.shuffle(&mut rng);
    Ok(qa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::VocabularyConfig;
    use crate::world::scene::{generate_corpus, SceneLimits, SceneObject};

    fn setup() -> (Vocab, Vec<SceneGraph>, CorpusStats) {
        let v = Vocab::new(VocabularyConfig::default()).unwrap();
        let corpus = generate_corpus(100, 500, &v, &SceneLimits::default()).unwrap();
        let stats = CorpusStats::from_scenes(&corpus, &v);
        (v, corpus, stats)
    }

    #[test]
    fn random_mode_question_pattern() {
        let (v, _, stats) = setup();
        let s = SceneGraph {
            scene_id: "t".into(),
            objects: vec![
                SceneObject {
                    id: 0,
                    noun: "dog".into(),
                    attributes: vec![],
                },
                SceneObject {
                    id: 1,
                    noun: "ball".into(),
                    attributes: vec![],
                },
            ],
            relations: vec![],
        };
        let qa = generate_pope_qa(&s, PopeMode::Random, &stats, &v, 3).unwrap();
        assert_eq!(qa.len(), 4);
        for q in &qa {
            assert_eq!(q.question, format!("Is there a {} in the image?", q.noun));
            assert_eq!(noun_of_question(&q.question), Some(q.noun.as_str()));
            assert_eq!(q.answer == Answer::Yes, s.has_noun(&q.noun));
        }
    }

    #[test]
    fn yes_questions_name_present_nouns_and_sets_balance() {
        let (v, corpus, stats) = setup();
        for mode in PopeMode::ALL {
            for (i, s) in corpus.iter().enumerate() {
                let qa = generate_pope_qa(s, mode, &stats, &v, i as u64).unwrap();
                let yes = qa.iter().filter(|q| q.answer == Answer::Yes).count();
                assert_eq!(yes, qa.len() - yes);
                for q in &qa {
                    assert_eq!(q.answer == Answer::Yes, s.has_noun(&q.noun));
                }
            }
        }
    }

    #[test]
    fn adversarial_negatives_cooccur_more_than_random() {
        let (v, corpus, stats) = setup();
        let mean = |mode| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for (i, s) in corpus.iter().enumerate() {
                for q in generate_pope_qa(s, mode, &stats, &v, i as u64).unwrap() {
                    if q.answer == Answer::No {
                        sum += stats.cooccurrence_score(&q.noun, s) as f64;
                        n += 1.0;
                    }
                }
            }
            sum / n
        };
        let adv = mean(PopeMode::Adversarial);
        let rnd = mean(PopeMode::Random);
        assert!(adv >= rnd, "adversarial {adv} < random {rnd}");
    }

    #[test]
    fn popular_mode_prefers_frequent_nouns() {
        let (v, corpus, stats) = setup();
        let s = &corpus[0];
        let qa = generate_pope_qa(s, PopeMode::Popular, &stats, &v, 0).unwrap();
        let min_neg = qa
            .iter()
            .filter(|q| q.answer == Answer::No)
            .map(|q| stats.frequency[stats.index(&q.noun).unwrap()])
            .min()
            .unwrap();
        for n in v.nouns() {
            if !s.has_noun(n) && !qa.iter().any(|q| &q.noun == n) {
                assert!(stats.frequency[stats.index(n).unwrap()] <= min_neg);
            }
        }
    }
}
