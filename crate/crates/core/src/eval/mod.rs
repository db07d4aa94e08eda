//! Hallucination metrics over generated captions.

pub mod metrics;
pub mod pope;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{row_seed, sample_batch, Policy, SampleRequest};
use crate::vocab::Vocab;
use crate::world::pope::{generate_pope_qa, CorpusStats, PopeMode, PopeQuestion};
use crate::world::scene::SceneGraph;

pub use metrics::{
    chair_scores, fact_counts, faithscore, judge_all, judge_response, per_type_rates,
    JudgedResponse, JudgedSubSentence,
};
pub use pope::{
    pope_eval, AlwaysYes, CaptionAnswerer, Confusion, OracleAnswerer, PopeAnswerer, PopeReport,
    PopeScore,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub prompt: String,
    /// Decoding temperature; 0 decodes greedily.
    pub temperature: f64,
    pub seed: u64,
    /// Also score caption-based POPE answers.
    pub pope: bool,
    /// Seed of the POPE question sets, independent of decoding.
    pub pope_seed: u64,
    /// Rows sampled per forward batch; results do not depend on it.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            prompt: crate::annotate::SAMPLING_PROMPT.into(),
            temperature: 1.0,
            seed: 0,
            pope: false,
            pope_seed: 0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chair_i: f64,
    pub chair_s: f64,
    pub f_score: f64,
    pub f_score_s: f64,
    /// Hallucination rate per category (existence, attribute, relation);
    /// absent when no fact of the category was produced.
    pub per_type_rates: [Option<f64>; 3],
    pub fact_counts: [(usize, usize); 3],
    pub unparseable_sub_sentences: usize,
    pub fact_free_sub_sentences: usize,
    pub mean_length: f64,
    pub samples: usize,
    pub seeds: Vec<u64>,
    pub pope: Option<PopeReport>,
}

/// Scores `(scene, caption)` pairs.
pub fn evaluate_captions(
    items: &[(&SceneGraph, &str)],
    vocab: &Vocab,
    seeds: Vec<u64>,
) -> Result<EvalReport> {
    let judged = judge_all(items, vocab)?;
    let (chair_i, chair_s) = chair_scores(&judged)?;
    let (f_score, f_score_s) = faithscore(&judged)?;
    let subs = || judged.iter().flat_map(|r| &r.sub_sentences);
    let unparseable = subs().filter(|s| !s.parsed).count();
    let fact_free = subs().filter(|s| !s.has_facts()).count();
    if unparseable > 0 {
        log::info!("{unparseable} unparseable sub-sentences counted as hallucinated mentions");
    }
    if fact_free > 0 {
        log::info!("{fact_free} fact-free sub-sentences excluded from F_Score_S");
    }
    Ok(EvalReport {
        chair_i,
        chair_s,
        f_score,
        f_score_s,
        per_type_rates: per_type_rates(&judged),
        fact_counts: fact_counts(&judged),
        unparseable_sub_sentences: unparseable,
        fact_free_sub_sentences: fact_free,
        mean_length: judged.iter().map(|r| r.length as f64).sum::<f64>() / judged.len() as f64,
        samples: judged.len(),
        seeds,
        pope: None,
    })
}

/// One caption per scene; row `i` samples from `row_seed(seed, i)`.
pub fn generate_captions(
    policy: &Policy,
    vocab: &Vocab,
    scenes: &[SceneGraph],
    config: &EvalConfig,
) -> Result<Vec<String>> {
    if config.batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let observations: Vec<String> = scenes.iter().map(SceneGraph::observation).collect();
    let mut out = Vec::with_capacity(scenes.len());
    for (c, chunk) in observations.chunks(config.batch_size).enumerate() {
        let requests: Vec<SampleRequest<'_>> = chunk
            .iter()
            .enumerate()
            .map(|(j, o)| SampleRequest {
                prompt: &config.prompt,
                observation: o,
                seed: row_seed(config.seed, c * config.batch_size + j),
            })
            .collect();
        out.extend(
            sample_batch(policy, vocab, &requests, config.temperature, None)?
                .into_iter()
                .map(|(text, _)| text),
        );
    }
    Ok(out)
}

/// Per-mode POPE question sets over `scenes`.
pub fn pope_sets(
    scenes: &[SceneGraph],
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<(PopeMode, Vec<PopeQuestion>)>> {
    let stats = CorpusStats::from_scenes(scenes, vocab);
    PopeMode::ALL
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let mut qs = Vec::new();
            for (i, s) in scenes.iter().enumerate() {
                let seed = crate::seed::derive_seed(seed, (m * scenes.len() + i) as u64);
                qs.extend(generate_pope_qa(s, mode, &stats, vocab, seed)?);
            }
            Ok((mode, qs))
        })
        .collect()
}

/// Generates captions for held-out scenes and scores them.
pub fn evaluate_policy(
    policy: &Policy,
    vocab: &Vocab,
    scenes: &[SceneGraph],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let captions = generate_captions(policy, vocab, scenes, config)?;
    let items: Vec<(&SceneGraph, &str)> = scenes
        .iter()
        .zip(&captions)
        .map(|(s, c)| (s, c.as_str()))
        .collect();
    let mut report = evaluate_captions(&items, vocab, vec![config.seed])?;
    if config.pope {
        let pairs: Vec<(String, String)> = scenes
            .iter()
            .zip(&captions)
            .map(|(s, c)| (s.scene_id.clone(), c.clone()))
            .collect();
        let answerer = CaptionAnswerer::new("caption", &pairs, vocab);
        let sets = pope_sets(scenes, vocab, config.pope_seed)?;
        report.pope = Some(pope_eval(&answerer, &sets, scenes)?);
    }
    Ok(report)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n > 0 {
        s / n as f64
    } else {
        0.0
    }
}

/// Field-wise mean of reports from different seeds. A per-type rate is
/// averaged over the reports where it is present.
pub fn mean_report(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to average".into()))?;
    let per_type_rates = std::array::from_fn(|c| {
        let present: Vec<f64> = reports.iter().filter_map(|r| r.per_type_rates[c]).collect();
        (!present.is_empty()).then(|| mean(present.into_iter()))
    });
    let pope = if reports.iter().all(|r| r.pope.is_some()) {
        let ps: Vec<&PopeReport> = reports.iter().filter_map(|r| r.pope.as_ref()).collect();
        let modes = (0..ps[0].modes.len())
            .map(|m| {
                let get = |f: fn(&PopeScore) -> f64| mean(ps.iter().map(|p| f(&p.modes[m])));
                PopeScore {
                    mode: ps[0].modes[m].mode,
                    questions: ps.iter().map(|p| p.modes[m].questions).sum(),
                    accuracy: get(|s| s.accuracy),
                    precision: get(|s| s.precision),
                    recall: get(|s| s.recall),
                    f1: get(|s| s.f1),
                    yes_ratio: get(|s| s.yes_ratio),
                    unparsed: ps.iter().map(|p| p.modes[m].unparsed).sum(),
                }
            })
            .collect();
        Some(PopeReport {
            answerer: ps[0].answerer.clone(),
            modes,
            overall_f1: mean(ps.iter().map(|p| p.overall_f1)),
        })
    } else {
        None
    };
    let sum_counts = |c: usize| {
        reports
            .iter()
            .fold((0, 0), |(a, b), r| (a + r.fact_counts[c].0, b + r.fact_counts[c].1))
    };
    Ok(EvalReport {
        chair_i: mean(reports.iter().map(|r| r.chair_i)),
        chair_s: mean(reports.iter().map(|r| r.chair_s)),
        f_score: mean(reports.iter().map(|r| r.f_score)),
        f_score_s: mean(reports.iter().map(|r| r.f_score_s)),
        per_type_rates,
        fact_counts: std::array::from_fn(sum_counts),
        unparseable_sub_sentences: reports.iter().map(|r| r.unparseable_sub_sentences).sum(),
        fact_free_sub_sentences: reports.iter().map(|r| r.fact_free_sub_sentences).sum(),
        mean_length: mean(reports.iter().map(|r| r.mean_length)),
        samples: reports.iter().map(|r| r.samples).sum(),
        seeds: reports.iter().flat_map(|r| r.seeds.clone()).collect(),
        pope: pope.or_else(|| first.pope.clone().filter(|_| reports.len() == 1)),
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.1}", 100.0 * v))
}

/// Plain-text table, one row per method, rates in percent.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let header = [
        "Method", "CHAIR_S", "CHAIR_I", "F-Score", "F-Score_S", "Obj", "Att", "Rel", "POPE F1",
        "Len",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for (name, r) in rows {
        cells.push(vec![
            name.clone(),
            pct(Some(r.chair_s)),
            pct(Some(r.chair_i)),
            pct(Some(r.f_score)),
            pct(Some(r.f_score_s)),
            pct(r.per_type_rates[0]),
            pct(r.per_type_rates[1]),
            pct(r.per_type_rates[2]),
            pct(r.pope.as_ref().map(|p| p.overall_f1)),
            format!("{:.1}", r.mean_length),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        format!("| {} |", parts.join(" | "))
    };
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let mut out = vec![line(&cells[0]), format!("|-{}-|", rule.join("-|-"))];
    out.extend(cells[1..].iter().map(|r| line(r)));
    out.join("\n") + "\n"
}
