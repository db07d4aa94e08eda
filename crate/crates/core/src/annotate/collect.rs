//! Feedback collection: sample, segment, extract, verify, aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::segment::{segment, SubSentenceSpan, TokenStream};
use crate::vocab::Vocab;
use crate::world::caption::render_gold_caption;
use crate::world::inject::{inject_hallucination, InjectionKind, InjectionLog};
use crate::world::scene::SceneGraph;

use super::extract::{ExtractRequest, FactExtractor};
use super::facts::ExtractedFacts;
use super::labels::{aggregate_labels, group_verdicts};
use super::record::{FeedbackRecord, Provenance, RECORD_SCHEMA_VERSION};
use super::verify::{FactVerdict, FactVerifier};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub injection: Option<InjectionLog>,
}

/// Anything that produces a response for a scene: a trained policy, or the
/// gold / injecting captioners used to build labeled corpora.
pub trait Captioner {
    fn id(&self) -> String;
    fn caption(&self, scene: &SceneGraph, prompt: &str, seed: u64) -> Result<Caption>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GoldCaptioner;

impl Captioner for GoldCaptioner {
    fn id(&self) -> String {
        "gold".into()
    }

    fn caption(&self, scene: &SceneGraph, _prompt: &str, _seed: u64) -> Result<Caption> {
        Ok(Caption {
            text: render_gold_caption(scene),
            injection: None,
        })
    }
}

/// Gold caption followed by hallucination injection.
#[derive(Debug, Clone)]
pub struct InjectingCaptioner {
    pub vocab: Vocab,
    pub rate: f64,
    pub types: Vec<InjectionKind>,
}

impl Captioner for InjectingCaptioner {
    fn id(&self) -> String {
        format!("gold+inject@{}", self.rate)
    }

    fn caption(&self, scene: &SceneGraph, _prompt: &str, seed: u64) -> Result<Caption> {
        let gold = render_gold_caption(scene);
        let (text, log) =
            inject_hallucination(&gold, scene, &self.vocab, seed, self.rate, &self.types)?;
        Ok(Caption {
            text,
            injection: Some(log),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub attempted: usize,
    pub collected: usize,
    /// Failure counts keyed by error kind.
    pub failures: BTreeMap<String, usize>,
}

struct Pending<'a> {
    scene: &'a SceneGraph,
    seed: u64,
    caption: Caption,
    stream: TokenStream,
    spans: Vec<SubSentenceSpan>,
    facts: Vec<ExtractedFacts>,
}

/// Runs the collection pipeline over `scenes`. The seed for scene `i` is
/// derived from `(config.seed, i)`. Failed records are logged, counted and
/// skipped; if every record fails the histogram is returned as an error.
pub fn collect_feedback(
    captioner: &dyn Captioner,
    scenes: &[SceneGraph],
    extractor: &dyn FactExtractor,
    verifier: &dyn FactVerifier,
    vocab: &Vocab,
    config: &CollectConfig,
) -> Result<(Vec<FeedbackRecord>, CollectionReport)> {
    if scenes.is_empty() {
        return Err(Error::Config("empty scene corpus".into()));
    }
    let mut report = CollectionReport {
        attempted: scenes.len(),
        ..Default::default()
    };
    let fail = |report: &mut CollectionReport, scene: &SceneGraph, e: &Error| {
        log::warn!("skipping record for scene {}: {e}", scene.scene_id);
        *report.failures.entry(e.kind().to_string()).or_default() += 1;
    };

    let mut pending = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let seed = derive_seed(config.seed, i as u64);
        let step = captioner
            .caption(scene, &config.prompt, seed)
            .and_then(|caption| {
                let (stream, spans) =
                    segment(&config.prompt, &scene.observation(), &caption.text, vocab)?;
                Ok((caption, stream, spans))
            });
        match step {
            Ok((caption, stream, spans)) => pending.push(Pending {
                scene,
                seed,
                caption,
                stream,
                spans,
                facts: Vec::new(),
            }),
            Err(e) => fail(&mut report, scene, &e),
        }
    }

    let requests: Vec<ExtractRequest<'_>> = pending
        .iter()
        .flat_map(|p| {
            p.spans.iter().map(|s| ExtractRequest {
                sub_sentence: s.text(&p.caption.text),
                context: &p.caption.text,
            })
        })
        .collect();
    let mut extracted = extractor.extract_batch(&requests).into_iter();
    drop(requests);
    let mut survivors = Vec::with_capacity(pending.len());
    for mut p in pending {
        let results: Vec<_> = extracted.by_ref().take(p.spans.len()).collect();
        match results.into_iter().collect::<Result<Vec<_>>>() {
            Ok(facts) => {
                p.facts = facts;
                survivors.push(p);
            }
            Err(e) => fail(&mut report, p.scene, &e),
        }
    }

    let requests: Vec<_> = survivors
        .iter()
        .flat_map(|p| {
            p.facts
                .iter()
                .flat_map(|f| f.iter().map(|fact| (p.scene, fact)))
        })
        .collect();
    let mut verified = verifier.verify_batch(&requests).into_iter();
    drop(requests);
    let mut records = Vec::with_capacity(survivors.len());
    for p in survivors {
        let mut per_segment: Vec<Vec<FactVerdict>> = Vec::with_capacity(p.facts.len());
        let mut error = None;
        for facts in &p.facts {
            let mut vs = Vec::with_capacity(facts.len());
            for fact in facts.iter() {
                match verified.next().expect("one verdict per fact") {
                    Ok(label) => vs.push(FactVerdict {
                        fact: fact.clone(),
                        label,
                        source: verifier.source(),
                    }),
                    Err(e) => error = error.or(Some(e)),
                }
            }
            per_segment.push(vs);
        }
        if let Some(e) = error {
            fail(&mut report, p.scene, &e);
            continue;
        }
        let labels = aggregate_labels(&group_verdicts(&per_segment));
        let record = FeedbackRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            scene_id: p.scene.scene_id.clone(),
            prompt: config.prompt.clone(),
            scene_observation: p.scene.observation(),
            response: p.caption.text,
            stream: p.stream,
            spans: p.spans,
            verdicts: per_segment,
            labels,
            provenance: Provenance {
                policy: captioner.id(),
                extractor: extractor.name(),
                verifier: verifier.source(),
                seed: p.seed,
            },
            injection: p.caption.injection,
        };
        record.validate()?;
        records.push(record);
    }
    report.collected = records.len();
    if records.is_empty() {
        return Err(Error::Collection {
            total: report.attempted,
            histogram: report.failures,
        });
    }
    if report.collected < report.attempted {
        log::warn!(
            "collected {} of {} records; failures: {:?}",
            report.collected,
            report.attempted,
            report.failures
        );
    }
    Ok((records, report))
}
