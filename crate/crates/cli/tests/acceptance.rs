//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fgaif_cli::commands::{self, paths, AblationReport, EvalTarget};
use fgaif_cli::manifest::RunManifest;
use fgaif_cli::RunConfig;
use fgaif_core::annotate::{
    aggregate_category, aggregate_labels, collect_feedback, Category, CollectConfig, FeedbackRecord,
    InjectingCaptioner, OracleVerifier, RuleBasedExtractor, SAMPLING_PROMPT,
};
use fgaif_core::eval::{pope_eval, pope_sets, AlwaysYes, EvalReport, OracleAnswerer};
use fgaif_core::nn::gradcheck::{all_coordinates, check_gradients, max_rel_error};
use fgaif_core::nn::{Params, Tape};
use fgaif_core::policy::{context_ids, evaluate_logprobs_values, Policy, PolicyConfig};
use fgaif_core::reward::{
    batch_loss, evaluate, examples_for, Query, RewardKind, RewardModel, RewardModelConfig, RmExample,
    SegmentRewards,
};
use fgaif_core::rl::{
    assemble_coarse_rewards, assemble_token_rewards, compute_gae, minibatch_loss, PpoSample, RewardWeights,
    Variant,
};
use fgaif_core::segment::segment;
use fgaif_core::vocab::{Vocab, VocabularyConfig, DELIMITERS};
use fgaif_core::world::inject::ALL_KINDS;
use fgaif_core::world::{generate_corpus, inject_hallucination, render_gold_caption, Answer, Clause, InjectionKind, SceneGraph};

type Check = Result<String, Box<dyn Error>>;

/// Fails the enclosing criterion with a formatted message.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+).into());
        }
    };
}

struct Suite {
    failed: usize,
}

impl Suite {
    /// Runs one criterion; `budget` is its wall-clock limit in seconds.
    fn run(&mut self, n: usize, name: &str, budget: f64, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(msg.into())
            });
        let secs = start.elapsed().as_secs_f64();
        self.report(n, name, budget, secs, outcome);
    }

    fn report(&mut self, n: usize, name: &str, budget: f64, secs: f64, outcome: Check) {
        let (ok, detail) = match outcome {
            Ok(d) if secs <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:.0}s budget")),
            Err(e) => (false, e.to_string()),
        };
        self.failed += usize::from(!ok);
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {verdict} [{secs:.1}s] {detail}");
    }
}

fn vocab() -> Vocab {
    Vocab::new(VocabularyConfig::default()).unwrap()
}

fn records(v: &Vocab, scenes: &[SceneGraph], rate: f64, seed: u64) -> Result<Vec<FeedbackRecord>, Box<dyn Error>> {
    let captioner = InjectingCaptioner {
        vocab: v.clone(),
        rate,
        types: ALL_KINDS.to_vec(),
    };
    let config = CollectConfig {
        prompt: SAMPLING_PROMPT.into(),
        seed,
    };
    let (records, report) = collect_feedback(
        &captioner,
        scenes,
        &RuleBasedExtractor::new(v.clone()),
        &OracleVerifier::new(v.clone()),
        v,
        &config,
    )?;
    ensure!(report.collected == scenes.len(), "{} of {} records collected", report.collected, scenes.len());
    Ok(records)
}

/// Labels a sub-sentence must carry given how the injector touched it:
/// 2 where the clause states nothing of a category, else 1 iff that
/// category was corrupted.
fn expected_labels(text: &str, kind: InjectionKind, v: &Vocab) -> Result<[u8; 3], Box<dyn Error>> {
    let stated = match Clause::parse(text, v)? {
        Clause::Exists { attributes, .. } => [true, !attributes.is_empty(), false],
        Clause::Attribute { .. } => [false, true, false],
        Clause::Relation { .. } => [false, false, true],
    };
    let mut out = [2u8; 3];
    for c in Category::ALL {
        if stated[c.index()] {
            out[c.index()] = u8::from(kind.category() == Some(c));
        }
    }
    Ok(out)
}

fn annotation_fidelity() -> Check {
    let v = vocab();
    let scenes = generate_corpus(20_001, 1000, &v, &Default::default())?;
    let records = records(&v, &scenes, 0.3, 20_002)?;
    let (mut spans, mut injected, mut mismatches) = (0, 0, 0);
    for r in &records {
        let log = r.injection.as_ref().ok_or("record without injection log")?;
        ensure!(log.len() == r.spans.len(), "{}: log and spans differ in length", r.scene_id);
        for (i, (span, entry)) in r.spans.iter().zip(&log.entries).enumerate() {
            ensure!(span.text(&r.response) == entry.span, "{}: span {i} misaligned", r.scene_id);
            spans += 1;
            injected += usize::from(entry.kind != InjectionKind::None);
            mismatches += usize::from(r.labels.0[i] != expected_labels(&entry.span, entry.kind, &v)?);
        }
    }
    ensure!(mismatches == 0, "{mismatches} of {spans} sub-sentences mislabeled");
    Ok(format!("{} captions, {spans} sub-sentences, {injected} injected, 0 mismatches", records.len()))
}

fn random_rewards(rng: &mut ChaCha8Rng) -> (SegmentRewards, Vec<usize>, usize) {
    let n = rng.random_range(1..8);
    let mut positions = Vec::with_capacity(n);
    let mut at = rng.random_range(0..4);
    for _ in 0..n {
        at += rng.random_range(1..6);
        positions.push(at);
    }
    let len = at + 1 + rng.random_range(0..3);
    let mut draw = || Some((0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>());
    let seg = SegmentRewards {
        by_category: [draw(), draw(), draw()],
    };
    (seg, positions, len)
}

fn formula_suite() -> Check {
    // Sign aggregation over every verdict vector up to length 8.
    let mut vectors = 0;
    for len in 0..=8usize {
        for bits in 0..(1u32 << len) {
            let verdicts: Vec<u8> = (0..len).map(|k| ((bits >> k) & 1) as u8).collect();
            let expected = if len == 0 { 2 } else { u8::from(bits != 0) };
            ensure!(aggregate_category(&verdicts) == expected, "aggregation of {verdicts:?}");
            vectors += 1;
        }
    }
    let grouped = aggregate_labels(&[[vec![0, 0], vec![], vec![1]], [vec![], vec![0, 1], vec![0]]]);
    ensure!(grouped.0 == vec![[0, 2, 1], [2, 1, 0]], "grouped labels {:?}", grouped.0);

    // Last-token indices against a count of whitespace words and delimiters.
    let v = vocab();
    let scenes = generate_corpus(20_003, 300, &v, &Default::default())?;
    let count = |s: &str| -> usize {
        s.split_whitespace()
            .map(|w| {
                let delims = w.chars().filter(|c| DELIMITERS.contains(c)).count();
                let runs = w.split(|c| DELIMITERS.contains(&c)).filter(|p| !p.is_empty()).count();
                delims + runs
            })
            .sum()
    };
    let mut indices = 0;
    for (i, s) in scenes.iter().enumerate() {
        let (caption, _) = inject_hallucination(&render_gold_caption(s), s, &v, i as u64, 0.3, &ALL_KINDS)?;
        let obs = s.observation();
        let (_, spans) = segment(SAMPLING_PROMPT, &obs, &caption, &v)?;
        // Prompt marker, prompt, scene markers and the response marker precede the response.
        let offset = 1 + count(SAMPLING_PROMPT) + 1 + count(&obs) + 2;
        for span in &spans {
            let expected = offset + count(&caption[..span.char_end]) - 1;
            ensure!(span.last_token_index == expected, "{}: span {} at {} not {expected}", s.scene_id, span.index, span.last_token_index);
            indices += 1;
        }
    }

    // Dense reward placement and coarse reward at the final token.
    let mut rng = ChaCha8Rng::seed_from_u64(20_004);
    for _ in 0..500 {
        let (seg, positions, len) = random_rewards(&mut rng);
        let w = RewardWeights {
            o: rng.random_range(0.0..2.0),
            a: rng.random_range(0.0..2.0),
            r: rng.random_range(0.0..2.0),
            coarse: rng.random_range(0.0..2.0),
        };
        let out = assemble_token_rewards(&seg, &positions, w, &Category::ALL, len)?;
        ensure!(out.values.len() == len, "reward length");
        let ws = [w.o, w.a, w.r];
        for t in 0..len {
            let expected = match positions.iter().position(|&p| p == t) {
                Some(i) => -(0..3).map(|l| ws[l] * seg.by_category[l].as_ref().unwrap()[i]).sum::<f64>(),
                None => 0.0,
            };
            ensure!((out.values[t] - expected).abs() <= 1e-9, "token {t}: {} vs {expected}", out.values[t]);
        }
        let r = rng.random_range(-1.0..1.0);
        let coarse = assemble_coarse_rewards(r, len - 1, w, len)?;
        for t in 0..len {
            let expected = if t == len - 1 { -w.coarse * r } else { 0.0 };
            ensure!((coarse.values[t] - expected).abs() <= 1e-9, "coarse token {t}");
        }
    }

    // Reward-model loss against a hand-computed softmax cross-entropy.
    let recs = records(&v, &scenes[..40], 0.3, 20_005)?;
    let mut worst_ce: f64 = 0.0;
    for kind in [RewardKind::Fine(Category::Existence), RewardKind::Fine(Category::Relation), RewardKind::Coarse] {
        let model = RewardModel::new(kind, RewardModelConfig::default(), &v, 7)?;
        let examples = examples_for(kind, &recs, false);
        let batch: Vec<&RmExample> = examples.iter().filter(|e| !e.positions.is_empty()).collect();
        let mut tape = Tape::new(&model.params);
        let loss = batch_loss(&model, &mut tape, &batch)?.ok_or("empty batch")?;
        let got = tape.value(loss).item();
        let mut tape = Tape::new(&model.params);
        let queries: Vec<Query<'_>> = batch.iter().map(|e| Query { ids: &e.ids, positions: &e.positions }).collect();
        let logits = model.logits(&mut tape, &queries)?;
        let z = tape.value(logits).clone();
        let mut row = 0;
        let mut manual = 0.0;
        for e in &batch {
            let mut rec = 0.0;
            for &t in &e.targets {
                let x = &z.data[row * z.cols..(row + 1) * z.cols];
                let m = x.iter().cloned().fold(f64::MIN, f64::max);
                let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                rec += lse - x[t];
                row += 1;
            }
            manual += rec / e.targets.len() as f64;
        }
        manual /= batch.len() as f64;
        worst_ce = worst_ce.max((got - manual).abs());
    }
    ensure!(worst_ce <= 1e-9, "reward-model loss differs by {worst_ce:e}");

    // GAE against the explicit discounted sum of TD residuals.
    let mut worst_gae: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..30);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gamma = rng.random_range(0.5..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = compute_gae(&rewards, &values, gamma, lambda);
        for t in 0..n {
            let mut brute = 0.0;
            for k in t..n {
                let next = if k + 1 < n { values[k + 1] } else { 0.0 };
                let delta = rewards[k] + gamma * next - values[k];
                brute += f64::powi(gamma * lambda, (k - t) as i32) * delta;
            }
            worst_gae = worst_gae.max((adv[t] - brute).abs()).max((ret[t] - brute - values[t]).abs());
        }
    }
    ensure!(worst_gae <= 1e-9, "GAE differs by {worst_gae:e}");
    Ok(format!(
        "{vectors} verdict vectors, {indices} token indices, 1000 reward vectors, CE err {worst_ce:.1e}, GAE err {worst_gae:.1e}"
    ))
}

fn small_vocab() -> Vocab {
    Vocab::new(VocabularyConfig {
        nouns: vec!["dog".into(), "cat".into()],
        attributes: vec!["red".into()],
        predicates: vec!["on".into()],
        ..Default::default()
    })
    .unwrap()
}

fn randomize(params: &mut Params, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in &mut params.entries {
        for x in &mut e.tensor.data {
            *x = rng.random_range(-scale..scale);
        }
    }
}

fn gradient_checks() -> Check {
    let v = small_vocab();
    let config = RewardModelConfig {
        embed_dim: 2,
        window: 2,
        hidden: 2,
        heads: 1,
        max_len: 64,
    };
    let mut model = RewardModel::new(RewardKind::Fine(Category::Attribute), config, &v, 3)?;
    randomize(&mut model.params, 11, 0.9);
    let n = v.len() as u32;
    let examples: Vec<RmExample> = (0..3u32)
        .map(|k| RmExample {
            ids: (0..9).map(|i| (i * 5 + k * 3) % n).collect(),
            positions: vec![3, 5 + k as usize, 8],
            targets: vec![k as usize % 3, 1, 2],
        })
        .collect();
    let batch: Vec<&RmExample> = examples.iter().collect();
    let rm_loss = |p: &Params| {
        let mut m = model.clone();
        m.params = p.clone();
        let mut t = Tape::new(&m.params);
        let l = batch_loss(&m, &mut t, &batch).unwrap().unwrap();
        t.value(l).item()
    };
    let mut tape = Tape::new(&model.params);
    let loss = batch_loss(&model, &mut tape, &batch)?.ok_or("empty batch")?;
    let grads = tape.backward(loss);
    let rm_probes = all_coordinates(&model.params);
    ensure!(rm_probes.len() <= 200, "{} reward-model probes", rm_probes.len());
    let rm_err = max_rel_error(&check_gradients(&model.params, &grads, &rm_probes, 1e-4, rm_loss));

    let pc = PolicyConfig {
        embed_dim: 1,
        mem_window: 1,
        mem_dim: 2,
        pos_dim: 2,
        hidden: 2,
        heads: 1,
        max_response_len: 16,
        max_context_len: 32,
    };
    let mut policy = Policy::new(pc, &v, 4)?;
    randomize(&mut policy.params, 5, 0.9);
    let ctx = context_ids(SAMPLING_PROMPT, "dog red - , cat - - ,", &v);
    let mut samples = Vec::new();
    for (k, text) in ["there is a red dog .", "the cat is on the dog", "there is a cat ."].iter().enumerate() {
        let actions = v.encode(text);
        let scored = evaluate_logprobs_values(&policy, &[(&ctx, &actions)])?.remove(0);
        let len = actions.len();
        samples.push(PpoSample {
            context: ctx.clone(),
            actions,
            // Shifted old log-probabilities keep every ratio inside the clip range.
            old_logprobs: scored.logprobs.iter().enumerate().map(|(t, o)| o + 0.05 * ((t * 3 + k) as f64).cos()).collect(),
            advantages: (0..len).map(|t| ((t + k) as f64 * 0.7).sin()).collect(),
            returns: (0..len).map(|t| 0.1 * t as f64 - 0.3).collect(),
        });
    }
    let batch: Vec<&PpoSample> = samples.iter().collect();
    let ppo_loss = |p: &Params| {
        let mut q = policy.clone();
        q.params = p.clone();
        let mut t = Tape::new(&q.params);
        let (_, pl, _, _) = minibatch_loss(&q, &mut t, &batch, 0.2, 0.5).unwrap();
        t.value(pl).item()
    };
    let mut tape = Tape::new(&policy.params);
    let (_, pl, _, _) = minibatch_loss(&policy, &mut tape, &batch, 0.2, 0.5)?;
    let grads = tape.backward(pl);
    let probes: Vec<_> = all_coordinates(&policy.params)
        .into_iter()
        .filter(|(id, _)| !policy.is_value_head(*id))
        .collect();
    ensure!(probes.len() <= 200, "{} policy probes", probes.len());
    let ppo_err = max_rel_error(&check_gradients(&policy.params, &grads, &probes, 1e-4, ppo_loss));
    ensure!(rm_err < 1e-3 && ppo_err < 1e-3, "max relative error: reward model {rm_err:.2e}, surrogate {ppo_err:.2e}");
    Ok(format!(
        "reward model {} probes err {rm_err:.2e}; surrogate {} probes err {ppo_err:.2e}",
        rm_probes.len(),
        probes.len()
    ))
}

/// Desk-config artifacts shared by criteria 4 to 6.
struct Desk {
    cfg: RunConfig,
    dir: tempfile::TempDir,
    prep_secs: f64,
    sft_secs: f64,
    rm_secs: f64,
}

fn desk() -> Result<Desk, Box<dyn Error>> {
    let cfg = RunConfig::preset("desk")?;
    let dir = tempfile::tempdir()?;
    let out = dir.path();
    let t = Instant::now();
    commands::gen_world(&cfg, out)?;
    commands::collect(&cfg, out, false)?;
    let prep_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    commands::sft(&cfg, out)?;
    let sft_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    for kind in common::all_kinds() {
        commands::train_rm(&cfg, out, kind)?;
    }
    let rm_secs = t.elapsed().as_secs_f64();
    Ok(Desk {
        cfg,
        dir,
        prep_secs,
        sft_secs,
        rm_secs,
    })
}

fn reward_model_learnability(desk: &Desk) -> Check {
    let v = vocab();
    let scenes = generate_corpus(20_006, 1000, &v, &desk.cfg.limits())?;
    let held_out = records(&v, &scenes, 0.3, 20_007)?;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for kind in common::all_kinds() {
        let path = desk.dir.path().join(paths::rm_model(kind.code()));
        let ckpt = fgaif_core::checkpoint::Checkpoint::load(&path, None)?;
        let model = RewardModel::from_checkpoint(ckpt, &v)?;
        let stats = evaluate(&model, &examples_for(kind, &held_out, false))?;
        let floor = if kind == RewardKind::Coarse { 0.90 } else { 0.95 };
        parts.push(format!("{} {:.4}", kind.code(), stats.accuracy));
        if stats.accuracy < floor {
            failures.push(format!("{} {:.4} < {floor}", kind.code(), stats.accuracy));
        }
    }
    ensure!(failures.is_empty(), "held-out accuracy {}", failures.join(", "));
    ensure!(desk.rm_secs <= 600.0, "training took {:.0}s", desk.rm_secs);
    Ok(format!(
        "held-out accuracy {} on {} records; training {:.0}s",
        parts.join(", "),
        held_out.len(),
        desk.rm_secs
    ))
}

fn mean(reports: &[EvalReport], f: impl Fn(&EvalReport) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len() as f64
}

fn alignment_effect(desk: &Desk) -> Check {
    let start = Instant::now();
    let out = desk.dir.path();
    let (mut sft, mut tuned) = (Vec::new(), Vec::new());
    for &seed in &desk.cfg.seeds {
        let cfg = RunConfig { seed, ..desk.cfg.clone() };
        commands::train_ppo(&cfg, out, "fgaif")?;
        sft.push(commands::eval(&cfg, out, &EvalTarget::Sft)?);
        tuned.push(commands::eval(&cfg, out, &EvalTarget::Variant("fgaif".into()))?);
    }
    let secs = desk.prep_secs + desk.sft_secs + desk.rm_secs + start.elapsed().as_secs_f64();
    let (c0, c1) = (mean(&sft, |r| r.chair_s), mean(&tuned, |r| r.chair_s));
    let (f0, f1) = (mean(&sft, |r| r.f_score), mean(&tuned, |r| r.f_score));
    let detail = format!(
        "CHAIR_S {c0:.3} -> {c1:.3} ({:.0}% drop), F-Score {f0:.3} -> {f1:.3} over {} seeds; pipeline {secs:.0}s",
        100.0 * (1.0 - c1 / c0),
        desk.cfg.seeds.len()
    );
    ensure!(c0 >= 0.2, "SFT CHAIR_S below 0.2: {detail}");
    ensure!(c1 <= 0.5 * c0, "drop under 50%: {detail}");
    ensure!(f1 > f0, "F-Score did not rise: {detail}");
    ensure!(secs <= 1800.0, "over 30 min: {detail}");
    Ok(detail)
}

fn ablation_harness(desk: &Desk) -> Check {
    let start = Instant::now();
    let report: AblationReport = commands::ablate(&desk.cfg, desk.dir.path())?;
    let secs = desk.prep_secs + desk.sft_secs + desk.rm_secs + start.elapsed().as_secs_f64();
    ensure!(report.rows.len() == 6, "{} rows", report.rows.len());
    for row in &report.rows {
        ensure!(row.per_seed.len() == desk.cfg.seeds.len(), "{}: {} seeds", row.variant, row.per_seed.len());
        ensure!(row.mean.pope.is_some(), "{}: no POPE scores", row.variant);
        ensure!(row.mean.samples > 0, "{}: no samples", row.variant);
    }
    let table = report.table();
    let lines: Vec<&str> = table.lines().filter(|l| l.starts_with('|')).collect();
    let header_cells = lines.first().map(|l| l.split('|').count()).unwrap_or(0);
    for v in Variant::ALL {
        let line = lines
            .iter()
            .find(|l| l.split('|').nth(1).map(str::trim) == Some(v.name()))
            .ok_or_else(|| format!("no table row for {v}"))?;
        ensure!(line.split('|').count() == header_cells, "{v}: ragged row");
        ensure!(line.split('|').skip(1).take(header_cells - 2).all(|c| !c.trim().is_empty()), "{v}: empty cell");
    }
    let chair = |v: Variant| report.row(v).map(|r| r.mean.chair_s).unwrap_or(f64::NAN);
    let (fgaif, wo_aif) = (chair(Variant::Fgaif), chair(Variant::WoAif));
    let others: Vec<String> = Variant::ALL
        .iter()
        .filter(|v| !matches!(v, Variant::Fgaif | Variant::WoAif))
        .map(|&v| {
            let rel = if chair(v) > fgaif { ">" } else { "<=" };
            format!("{v} {:.3} {rel} fgaif", chair(v))
        })
        .collect();
    let detail = format!("fgaif {fgaif:.3} vs wo_aif {wo_aif:.3}; reported: {}; pipeline {secs:.0}s", others.join(", "));
    ensure!(fgaif < wo_aif, "fgaif does not beat wo_aif: {detail}");
    ensure!(secs <= 7200.0, "over 2 h: {detail}");
    Ok(detail)
}

fn pope_sanity() -> Check {
    let v = vocab();
    let scenes = generate_corpus(20_008, 300, &v, &Default::default())?;
    let sets = pope_sets(&scenes, &v, 20_009)?;
    let mut sizes = Vec::new();
    for (mode, qs) in &sets {
        let yes = qs.iter().filter(|q| q.answer == Answer::Yes).count();
        ensure!(!qs.is_empty() && 2 * yes == qs.len(), "{} has {yes} yes of {}", mode.name(), qs.len());
        sizes.push(format!("{} {}", mode.name(), qs.len()));
    }
    let oracle = pope_eval(&OracleAnswerer, &sets, &scenes)?;
    for m in &oracle.modes {
        ensure!(m.accuracy == 1.0 && m.unparsed == 0, "oracle accuracy {} in {}", m.accuracy, m.mode.name());
    }
    let yes = pope_eval(&AlwaysYes, &sets, &scenes)?;
    for m in &yes.modes {
        ensure!(m.yes_ratio == 1.0, "always-yes ratio {} in {}", m.yes_ratio, m.mode.name());
    }
    Ok(format!("balanced sets ({}); oracle accuracy 1.0; always-yes ratio 1.0", sizes.join(", ")))
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

fn determinism() -> Check {
    let cfg = common::tiny();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir()?;
        common::prepare(&cfg, dir.path())?;
        commands::train_ppo(&cfg, dir.path(), "fgaif")?;
        commands::eval(&cfg, dir.path(), &EvalTarget::Variant("fgaif".into()))?;
        commands::ablate(&cfg, dir.path())?;
        let mut files = BTreeMap::new();
        walk(dir.path(), dir.path(), &mut files)?;
        runs.push(files);
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(a.keys().eq(b.keys()), "runs wrote different file sets");
    let mut compared = 0;
    for (rel, bytes) in a {
        if rel.ends_with(".manifest.json") {
            let (ma, mb): (RunManifest, RunManifest) = (serde_json::from_slice(bytes)?, serde_json::from_slice(&b[rel])?);
            ensure!(ma.outputs == mb.outputs && ma.inputs == mb.inputs, "{rel}: hashes differ");
            ensure!(ma.metrics == mb.metrics && ma.config == mb.config, "{rel}: metrics differ");
        } else {
            ensure!(bytes == &b[rel], "{rel} differs between runs");
        }
        compared += 1;
    }
    let json = a.keys().filter(|k| k.ends_with(".json") && !k.ends_with(".manifest.json")).count();
    Ok(format!("{compared} files identical across two runs ({json} metric and model JSON files)"))
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    suite.run(1, "annotation fidelity", 60.0, annotation_fidelity);
    suite.run(2, "formula unit suite", 30.0, formula_suite);
    suite.run(3, "gradient checks", 60.0, gradient_checks);

    let start = Instant::now();
    match desk() {
        Ok(d) => {
            suite.run(4, "reward-model learnability", 600.0, || reward_model_learnability(&d));
            suite.run(5, "end-to-end alignment effect", f64::INFINITY, || alignment_effect(&d));
            suite.run(6, "ablation harness", f64::INFINITY, || ablation_harness(&d));
        }
        Err(e) => {
            let secs = start.elapsed().as_secs_f64();
            for (n, name) in [(4, "reward-model learnability"), (5, "end-to-end alignment effect"), (6, "ablation harness")] {
                suite.report(n, name, f64::INFINITY, secs, Err(format!("desk pipeline failed: {e}").into()));
            }
        }
    }

    suite.run(7, "POPE sanity", 60.0, pope_sanity);
    suite.run(8, "determinism", f64::INFINITY, determinism);

    if suite.failed == 0 {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of 8 criteria failed", suite.failed);
        ExitCode::FAILURE
    }
}
