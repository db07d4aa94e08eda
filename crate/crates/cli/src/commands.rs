//! Pipeline commands. Each one checks its upstream artifacts against their
//! producers' manifests, writes its outputs under the run directory and
//! leaves exactly one manifest next to them.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fgaif_annotator::{AnnotatorConfig, RemoteClient, RemoteExtractor};
use fgaif_core::annotate::{
    collect_feedback, read_records, write_records, CollectConfig, CollectionReport, FactExtractor,
    InjectingCaptioner, OracleVerifier, PromptTemplates, RuleBasedExtractor, SAMPLING_PROMPT,
};
use fgaif_core::checkpoint::Checkpoint;
use fgaif_core::eval::{evaluate_policy, mean_report, pope_sets, render_table, EvalConfig, EvalReport};
use fgaif_core::policy::{sft_train, Policy, SftExample, SftReport, POLICY_KIND};
use fgaif_core::reward::{train_reward_model, RewardKind, RewardModel, RewardModels, TrainingCurve};
use fgaif_core::rl::{run_fgaif, select_variant, ActiveRewards, IterationMetrics, Variant};
use fgaif_core::seed::derive_seed;
use fgaif_core::vocab::{Vocab, VocabularyConfig};
use fgaif_core::world::inject::ALL_KINDS;
use fgaif_core::world::scene::{read_scenes, write_scenes};
use fgaif_core::world::{generate_corpus, inject_hallucination, render_gold_caption, InjectionLog, SceneGraph};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_files, require_artifact, source_revision, FileHash, RunManifest};
use crate::plot;

/// Artifact locations relative to the run directory.
pub mod paths {
    pub const SFT_SCENES: &str = "world/sft_scenes.jsonl";
    pub const SFT_CORPUS: &str = "world/sft_corpus.jsonl";
    pub const RM_SCENES: &str = "world/rm_scenes.jsonl";
    pub const RL_SCENES: &str = "world/rl_scenes.jsonl";
    pub const EVAL_SCENES: &str = "world/eval_scenes.jsonl";
    pub const POPE: &str = "world/pope.json";
    pub const WORLD_MANIFEST: &str = "world/gen-world";

    pub const SFT_POLICY: &str = "sft/policy.json";
    pub const SFT_REPORT: &str = "sft/report.json";
    pub const SFT_PLOT: &str = "sft/ce.svg";
    pub const SFT_MANIFEST: &str = "sft/sft";

    pub const RECORDS: &str = "feedback/records.jsonl";
    pub const COLLECT_REPORT: &str = "feedback/report.json";
    pub const COLLECT_MANIFEST: &str = "feedback/collect";
    pub const REMOTE_CACHE: &str = "feedback/cache";

    pub fn rm_model(code: &str) -> String {
        format!("rm/{code}.json")
    }
    pub fn rm_curve(code: &str) -> String {
        format!("rm/{code}_curve.json")
    }
    pub fn rm_plot(code: &str) -> String {
        format!("rm/{code}_curve.svg")
    }
    pub fn rm_manifest(code: &str) -> String {
        format!("rm/train-rm-{code}")
    }

    pub fn ppo_dir(variant: &str, seed: u64) -> String {
        format!("ppo/{variant}/seed-{seed}")
    }

    pub const ABLATE_REPORT: &str = "ablate/report.json";
    pub const ABLATE_TABLE: &str = "ablate/table.md";
    pub const ABLATE_PLOT: &str = "ablate/chair_s.svg";
    pub const ABLATE_MANIFEST: &str = "ablate/ablate";
}

pub fn vocab() -> Vocab {
    Vocab::new(VocabularyConfig::default()).expect("default vocabulary is valid")
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// One line of the SFT corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRow {
    pub scene_id: String,
    pub observation: String,
    pub target: String,
    pub injection: InjectionLog,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Bookkeeping shared by every command: input hashes, timing, manifest.
struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    command: String,
    seeds: Vec<u64>,
    started: Instant,
    inputs: Vec<FileHash>,
}

impl<'a> Run<'a> {
    fn start(cfg: &'a RunConfig, out: &'a Path, command: impl Into<String>, seeds: Vec<u64>) -> CliResult<Self> {
        cfg.validate()?;
        let command = command.into();
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        log::info!("{command}: resolved config\n{}", cfg.to_toml());
        Ok(Self {
            cfg,
            out,
            command,
            seeds,
            started: Instant::now(),
            inputs: Vec::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&mut self, rel: &str, producer: &str, manifest: &str) -> CliResult<PathBuf> {
        self.inputs.push(require_artifact(self.out, rel, producer, manifest)?);
        Ok(self.path(rel))
    }

    fn require_world(&mut self, rel: &str) -> CliResult<PathBuf> {
        self.require(rel, "gen-world", paths::WORLD_MANIFEST)
    }

    fn require_model(&mut self, kind: RewardKind, vocab: &Vocab) -> CliResult<RewardModel> {
        let code = kind.code();
        let path = self.require(
            &paths::rm_model(code),
            &format!("train-rm --category {code}"),
            &paths::rm_manifest(code),
        )?;
        Ok(RewardModel::from_checkpoint(Checkpoint::load(&path, None)?, vocab)?)
    }

    fn require_sft(&mut self, vocab: &Vocab) -> CliResult<Policy> {
        let path = self.require(paths::SFT_POLICY, "sft", paths::SFT_MANIFEST)?;
        load_policy(&path, vocab)
    }

    fn finish<M: Serialize>(self, manifest: &str, outputs: &[String], metrics: &M) -> CliResult<RunManifest> {
        let m = RunManifest {
            command: self.command,
            config: self.cfg.clone(),
            seeds: self.seeds,
            source_revision: source_revision(),
            inputs: self.inputs,
            outputs: hash_files(self.out, outputs)?,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            metrics: serde_json::to_value(metrics)?,
        };
        m.write(self.out, manifest)?;
        log::info!("{} finished in {:.1}s", m.command, m.wall_clock_secs);
        Ok(m)
    }
}

pub fn load_policy(path: &Path, vocab: &Vocab) -> CliResult<Policy> {
    Ok(Policy::from_checkpoint(Checkpoint::load(path, Some(POLICY_KIND))?, vocab)?)
}

fn read_world(path: &Path) -> CliResult<Vec<SceneGraph>> {
    Ok(read_scenes(path)?)
}

/// Scene corpora use disjoint seed streams derived from the run seed.
fn corpus_seed(cfg: &RunConfig, stream: u64) -> u64 {
    derive_seed(cfg.seed, stream)
}

/// Decoding seed of evaluation runs tied to an RL seed.
pub fn eval_config_for(cfg: &RunConfig, rl_seed: u64) -> EvalConfig {
    EvalConfig {
        seed: derive_seed(cfg.eval_seed, rl_seed),
        ..cfg.eval()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub sft_scenes: usize,
    pub rm_scenes: usize,
    pub rl_scenes: usize,
    pub eval_scenes: usize,
    pub sft_sub_sentences: usize,
    pub injected_sub_sentences: usize,
    pub pope_questions: Vec<(String, usize)>,
}

/// Scene corpora, the injected SFT corpus and POPE question sets.
pub fn gen_world(cfg: &RunConfig, out: &Path) -> CliResult<WorldSummary> {
    let run = Run::start(cfg, out, "gen-world", vec![cfg.seed])?;
    let v = vocab();
    let limits = cfg.limits();
    let corpus = |stream, n| generate_corpus(corpus_seed(cfg, stream), n, &v, &limits);
    let sft = corpus(1, cfg.sft_scenes)?;
    let rm = corpus(2, cfg.rm_scenes)?;
    let rl = corpus(3, cfg.rl_scenes)?;
    let eval = corpus(4, cfg.eval_scenes)?;

    let inject_base = corpus_seed(cfg, 5);
    let mut rows = Vec::with_capacity(sft.len());
    let (mut total, mut injected) = (0, 0);
    for (i, s) in sft.iter().enumerate() {
        let (target, log) = inject_hallucination(
            &render_gold_caption(s),
            s,
            &v,
            derive_seed(inject_base, i as u64),
            cfg.injection_rate,
            &ALL_KINDS,
        )?;
        total += log.len();
        injected += log.corrupted();
        rows.push(SftRow {
            scene_id: s.scene_id.clone(),
            observation: s.observation(),
            target,
            injection: log,
        });
    }
    let pope = pope_sets(&eval, &v, cfg.pope_seed)?;

    for (rel, scenes) in [
        (paths::SFT_SCENES, &sft),
        (paths::RM_SCENES, &rm),
        (paths::RL_SCENES, &rl),
        (paths::EVAL_SCENES, &eval),
    ] {
        let path = run.path(rel);
        ensure_parent(&path)?;
        write_scenes(scenes, &path)?;
    }
    write_jsonl(&run.path(paths::SFT_CORPUS), &rows)?;
    write_json(&run.path(paths::POPE), &pope)?;

    let summary = WorldSummary {
        sft_scenes: sft.len(),
        rm_scenes: rm.len(),
        rl_scenes: rl.len(),
        eval_scenes: eval.len(),
        sft_sub_sentences: total,
        injected_sub_sentences: injected,
        pope_questions: pope.iter().map(|(m, q)| (m.name().to_string(), q.len())).collect(),
    };
    let outputs = [
        paths::SFT_SCENES,
        paths::SFT_CORPUS,
        paths::RM_SCENES,
        paths::RL_SCENES,
        paths::EVAL_SCENES,
        paths::POPE,
    ]
    .map(String::from);
    run.finish(paths::WORLD_MANIFEST, &outputs, &summary)?;
    Ok(summary)
}

/// Supervised fine-tuning of the policy on the injected corpus.
pub fn sft(cfg: &RunConfig, out: &Path) -> CliResult<SftReport> {
    let mut run = Run::start(cfg, out, "sft", vec![cfg.seed])?;
    let v = vocab();
    let corpus = run.require_world(paths::SFT_CORPUS)?;
    let rows: Vec<SftRow> = read_jsonl(&corpus)?;
    let examples: Vec<SftExample> = rows
        .into_iter()
        .map(|r| SftExample {
            observation: r.observation,
            target: r.target,
        })
        .collect();
    let policy = Policy::new(cfg.policy(), &v, cfg.seed)?;
    let (policy, report) = sft_train(policy, &examples, &v, &cfg.sft())?;
    let ckpt = run.path(paths::SFT_POLICY);
    ensure_parent(&ckpt)?;
    policy.to_checkpoint().save(&ckpt)?;
    write_json(&run.path(paths::SFT_REPORT), &report)?;
    let curve = |f: fn(&fgaif_core::policy::SftEpoch) -> f64| {
        report.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect::<Vec<_>>()
    };
    plot::line_chart(
        &run.path(paths::SFT_PLOT),
        "SFT cross-entropy",
        "epoch",
        "nats per token",
        &[("train".into(), curve(|e| e.train_ce)), ("validation".into(), curve(|e| e.val_ce))],
    )?;
    let outputs = [paths::SFT_POLICY, paths::SFT_REPORT, paths::SFT_PLOT].map(String::from);
    run.finish(paths::SFT_MANIFEST, &outputs, &report)?;
    Ok(report)
}

/// Feedback collection over the reward-model scenes. With `remote`, fact
/// extraction goes to the endpoint named by `FGAIF_ANNOTATOR_URL`;
/// verification stays with the scene oracle since synthetic scenes have no
/// images.
pub fn collect(cfg: &RunConfig, out: &Path, remote: bool) -> CliResult<CollectionReport> {
    let mut run = Run::start(cfg, out, "collect", vec![cfg.seed])?;
    let v = vocab();
    let scenes = read_world(&run.require_world(paths::RM_SCENES)?)?;
    let captioner = InjectingCaptioner {
        vocab: v.clone(),
        rate: cfg.rm_injection_rate,
        types: ALL_KINDS.to_vec(),
    };
    let extractor: Box<dyn FactExtractor> = if remote {
        let mut config = AnnotatorConfig::from_env()?;
        config.cache_dir = Some(run.path(paths::REMOTE_CACHE));
        let client = Arc::new(RemoteClient::new(config)?);
        Box::new(RemoteExtractor::new(client, PromptTemplates::default())?)
    } else {
        Box::new(RuleBasedExtractor::new(v.clone()))
    };
    let verifier = OracleVerifier::new(v.clone());
    let collect_config = CollectConfig {
        prompt: SAMPLING_PROMPT.into(),
        seed: corpus_seed(cfg, 6),
    };
    let (records, report) =
        collect_feedback(&captioner, &scenes, extractor.as_ref(), &verifier, &v, &collect_config)?;
    let path = run.path(paths::RECORDS);
    ensure_parent(&path)?;
    write_records(&records, &path)?;
    write_json(&run.path(paths::COLLECT_REPORT), &report)?;
    let outputs = [paths::RECORDS, paths::COLLECT_REPORT].map(String::from);
    run.finish(paths::COLLECT_MANIFEST, &outputs, &report)?;
    Ok(report)
}

/// Trains the reward model of one category (`o`, `a`, `r` or `coarse`).
pub fn train_rm(cfg: &RunConfig, out: &Path, kind: RewardKind) -> CliResult<TrainingCurve> {
    let code = kind.code();
    let mut run = Run::start(cfg, out, format!("train-rm --category {code}"), vec![cfg.seed])?;
    let v = vocab();
    let records = read_records(&run.require(paths::RECORDS, "collect", paths::COLLECT_MANIFEST)?)?;
    let (model, curve) = train_reward_model(kind, &records, &v, &cfg.rm())?;
    let ckpt = run.path(&paths::rm_model(code));
    ensure_parent(&ckpt)?;
    model.to_checkpoint().save(&ckpt)?;
    write_json(&run.path(&paths::rm_curve(code)), &curve)?;
    let series = |f: fn(&fgaif_core::reward::EpochStats) -> f64| {
        curve.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect::<Vec<_>>()
    };
    plot::line_chart(
        &run.path(&paths::rm_plot(code)),
        &format!("reward model {code}"),
        "epoch",
        "loss / accuracy",
        &[
            ("train loss".into(), series(|e| e.train_loss)),
            ("validation loss".into(), series(|e| e.val_loss)),
            ("validation accuracy".into(), series(|e| e.val_accuracy)),
        ],
    )?;
    let outputs = [paths::rm_model(code), paths::rm_curve(code), paths::rm_plot(code)];
    run.finish(&paths::rm_manifest(code), &outputs, &curve)?;
    Ok(curve)
}

/// Reward models a variant consumes.
pub fn required_models(active: &ActiveRewards) -> Vec<RewardKind> {
    match active {
        ActiveRewards::Fine(cats) => cats.iter().map(|&c| RewardKind::Fine(c)).collect(),
        ActiveRewards::Coarse => vec![RewardKind::Coarse],
        ActiveRewards::Skip => Vec::new(),
    }
}

const TRAINING_EVAL_SCENES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoOutcome {
    pub variant: String,
    pub seed: u64,
    pub iterations: Vec<IterationMetrics>,
}

fn reward_curves(metrics: &[IterationMetrics]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let reward = metrics.iter().map(|m| (m.iteration as f64, m.mean_reward)).collect();
    let chair = metrics
        .iter()
        .filter_map(|m| m.chair_s.map(|c| (m.iteration as f64, c)))
        .collect();
    (reward, chair)
}

/// PPO fine-tuning of the SFT policy under one reward variant.
pub fn train_ppo(cfg: &RunConfig, out: &Path, variant: &str) -> CliResult<PpoOutcome> {
    let resolved = select_variant(variant)?;
    let seed = cfg.seed;
    let mut run = Run::start(cfg, out, format!("train-ppo --variant {variant}"), vec![seed])?;
    let v = vocab();
    let policy = run.require_sft(&v)?;
    let mut models = RewardModels::default();
    for kind in required_models(&resolved.active) {
        models.insert(run.require_model(kind, &v)?);
    }
    let scenes = read_world(&run.require_world(paths::RL_SCENES)?)?;
    let eval_scenes = read_world(&run.require_world(paths::EVAL_SCENES)?)?;
    let monitor = &eval_scenes[..eval_scenes.len().min(TRAINING_EVAL_SCENES)];
    let (policy, iterations) = run_fgaif(&scenes, policy, &models, &resolved, &v, &cfg.ppo(seed), monitor)?;

    let dir = paths::ppo_dir(variant, seed);
    let ckpt = format!("{dir}/policy.json");
    let metrics = format!("{dir}/metrics.json");
    let reward_plot = format!("{dir}/reward.svg");
    ensure_parent(&run.path(&ckpt))?;
    policy.to_checkpoint().save(&run.path(&ckpt))?;
    let outcome = PpoOutcome {
        variant: variant.into(),
        seed,
        iterations,
    };
    write_json(&run.path(&metrics), &outcome)?;
    let (reward, _) = reward_curves(&outcome.iterations);
    plot::line_chart(
        &run.path(&reward_plot),
        &format!("{variant} seed {seed}"),
        "iteration",
        "mean reward",
        &[("reward".into(), reward)],
    )?;
    run.finish(&format!("{dir}/train-ppo"), &[ckpt, metrics, reward_plot], &outcome.iterations.last())?;
    Ok(outcome)
}

/// What `eval` scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalTarget {
    /// The SFT checkpoint.
    Sft,
    /// The `train-ppo` checkpoint of a variant at the run seed.
    Variant(String),
    /// Any policy checkpoint, relative to the run directory.
    Checkpoint(String),
}

impl EvalTarget {
    pub fn name(&self) -> String {
        match self {
            EvalTarget::Sft => "sft".into(),
            EvalTarget::Variant(v) => v.clone(),
            EvalTarget::Checkpoint(p) => Path::new(p)
                .with_extension("")
                .to_string_lossy()
                .replace(['/', '\\'], "_"),
        }
    }
}

/// Scores a checkpoint on the evaluation scenes. Reports land in
/// `eval/<name>-seed-<seed>.json`; when the checkpoint came from `train-ppo`,
/// its reward and CHAIR curves are plotted alongside.
pub fn eval(cfg: &RunConfig, out: &Path, target: &EvalTarget) -> CliResult<EvalReport> {
    let seed = cfg.seed;
    let mut run = Run::start(cfg, out, format!("eval {}", target.name()), vec![seed])?;
    let v = vocab();
    let (policy, training) = match target {
        EvalTarget::Sft => (run.require_sft(&v)?, None),
        EvalTarget::Variant(variant) => {
            select_variant(variant)?;
            let dir = paths::ppo_dir(variant, seed);
            let producer = format!("train-ppo --variant {variant} --seed {seed}");
            let manifest = format!("{dir}/train-ppo");
            let ckpt = run.require(&format!("{dir}/policy.json"), &producer, &manifest)?;
            let metrics = run.require(&format!("{dir}/metrics.json"), &producer, &manifest)?;
            let outcome: PpoOutcome = read_json(&metrics)?;
            (load_policy(&ckpt, &v)?, Some(outcome))
        }
        EvalTarget::Checkpoint(rel) => {
            let path = run.path(rel);
            if !path.exists() {
                return Err(CliError::MissingArtifact {
                    path,
                    command: "sft or train-ppo".into(),
                });
            }
            run.inputs.push(hash_files(out, &[rel.clone()])?.remove(0));
            (load_policy(&path, &v)?, None)
        }
    };
    let scenes = read_world(&run.require_world(paths::EVAL_SCENES)?)?;
    let report = evaluate_policy(&policy, &v, &scenes, &eval_config_for(cfg, seed))?;

    let stem = format!("eval/{}-seed-{seed}", target.name());
    let json = format!("{stem}.json");
    write_json(&run.path(&json), &report)?;
    let mut outputs = vec![json];
    if let Some(outcome) = training {
        let (reward, chair) = reward_curves(&outcome.iterations);
        let reward_plot = format!("{stem}_reward.svg");
        plot::line_chart(&run.path(&reward_plot), "mean reward", "iteration", "reward", &[("reward".into(), reward)])?;
        outputs.push(reward_plot);
        if !chair.is_empty() {
            let chair_plot = format!("{stem}_chair.svg");
            plot::line_chart(&run.path(&chair_plot), "CHAIR_S during training", "iteration", "CHAIR_S", &[("CHAIR_S".into(), chair)])?;
            outputs.push(chair_plot);
        }
    }
    run.finish(&stem, &outputs, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean: EvalReport,
    pub per_seed: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }

    pub fn table(&self) -> String {
        let rows: Vec<(String, EvalReport)> = self
            .rows
            .iter()
            .map(|r| (r.variant.clone(), r.mean.clone()))
            .collect();
        render_table(&rows)
    }
}

/// All six variants over the configured seeds, sharing the SFT policy and
/// reward models.
pub fn ablate(cfg: &RunConfig, out: &Path) -> CliResult<AblationReport> {
    let mut run = Run::start(cfg, out, "ablate", cfg.seeds.clone())?;
    let v = vocab();
    let sft_policy = run.require_sft(&v)?;
    let mut models = RewardModels::default();
    for kind in RewardKind::FINE.into_iter().chain([RewardKind::Coarse]) {
        models.insert(run.require_model(kind, &v)?);
    }
    let scenes = read_world(&run.require_world(paths::RL_SCENES)?)?;
    let eval_scenes = read_world(&run.require_world(paths::EVAL_SCENES)?)?;
    let monitor = &eval_scenes[..eval_scenes.len().min(TRAINING_EVAL_SCENES)];

    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let resolved = select_variant(variant.name())?;
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            log::info!("ablate: {variant} seed {seed}");
            let (policy, _) = run_fgaif(&scenes, sft_policy.clone(), &models, &resolved, &v, &cfg.ppo(seed), monitor)?;
            per_seed.push(evaluate_policy(&policy, &v, &eval_scenes, &eval_config_for(cfg, seed))?);
        }
        rows.push(AblationRow {
            variant: variant.name().into(),
            mean: mean_report(&per_seed)?,
            per_seed,
        });
    }
    let report = AblationReport {
        seeds: cfg.seeds.clone(),
        rows,
    };
    write_json(&run.path(paths::ABLATE_REPORT), &report)?;
    write_text(&run.path(paths::ABLATE_TABLE), &report.table())?;
    let bars: Vec<(String, f64)> = report.rows.iter().map(|r| (r.variant.clone(), r.mean.chair_s)).collect();
    plot::bar_chart(&run.path(paths::ABLATE_PLOT), "CHAIR_S by variant", "CHAIR_S", &bars)?;
    let outputs = [paths::ABLATE_REPORT, paths::ABLATE_TABLE, paths::ABLATE_PLOT].map(String::from);
    run.finish(paths::ABLATE_MANIFEST, &outputs, &report.rows.iter().map(|r| (&r.variant, r.mean.chair_s)).collect::<Vec<_>>())?;
    Ok(report)
}
