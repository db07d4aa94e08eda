//! Flat key-value run configuration with built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fgaif_core::eval::EvalConfig;
use fgaif_core::policy::{PolicyConfig, SftConfig};
use fgaif_core::reward::{RewardModelConfig, RmTrainConfig};
use fgaif_core::rl::{PpoConfig, RewardWeights};
use fgaif_core::world::SceneLimits;

use crate::error::{CliError, CliResult};

pub const DESK: &str = include_str!("../../../configs/desk.toml");
pub const PAPER_APPENDIX_B: &str = include_str!("../../../configs/paper-appendix-b.toml");

/// Every tunable of the pipeline. Keys missing from a file keep their
/// desk defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// RL seeds of `ablate` and of multi-seed evaluation.
    pub seeds: Vec<u64>,

    pub sft_scenes: usize,
    pub rm_scenes: usize,
    pub rl_scenes: usize,
    pub eval_scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_attributes: usize,
    pub max_relations: usize,
    pub injection_rate: f64,
    pub rm_injection_rate: f64,
    pub pope_seed: u64,

    pub policy_embed_dim: usize,
    pub policy_mem_window: usize,
    pub policy_mem_dim: usize,
    pub policy_pos_dim: usize,
    pub policy_hidden: usize,
    pub policy_heads: usize,
    pub policy_max_response_len: usize,
    pub policy_max_context_len: usize,

    pub sft_lr: f64,
    pub sft_batch_size: usize,
    pub sft_epochs: usize,
    pub sft_patience: usize,
    pub sft_val_fraction: f64,

    pub rm_lr: f64,
    pub rm_batch_size: usize,
    pub rm_epochs: usize,
    pub rm_patience: usize,
    pub rm_val_fraction: f64,
    pub rm_embed_dim: usize,
    pub rm_window: usize,
    pub rm_hidden: usize,
    pub rm_heads: usize,

    pub ppo_lr: f64,
    pub ppo_batch_size: usize,
    pub ppo_epochs: usize,
    pub ppo_minibatch_size: usize,
    pub ppo_iterations: usize,
    pub ppo_clip: f64,
    pub ppo_kl_beta: f64,
    pub ppo_gamma: f64,
    pub ppo_lambda: f64,
    pub ppo_value_coef: f64,
    pub ppo_grad_clip: f64,
    pub ppo_temperature: f64,
    pub ppo_eval_every: usize,
    pub w_o: f64,
    pub w_a: f64,
    pub w_r: f64,
    pub w_coarse: f64,

    pub eval_temperature: f64,
    pub eval_seed: u64,
    pub eval_pope: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let policy = PolicyConfig::default();
        let sft = SftConfig::default();
        let rm = RmTrainConfig::default();
        let ppo = PpoConfig::default();
        let limits = SceneLimits::default();
        Self {
            seed: 0,
            seeds: vec![0, 1, 2],
            sft_scenes: 4000,
            rm_scenes: 5000,
            rl_scenes: 2000,
            eval_scenes: 300,
            min_objects: limits.min_objects,
            max_objects: limits.max_objects,
            max_attributes: limits.max_attributes,
            max_relations: limits.max_relations,
            injection_rate: 0.3,
            rm_injection_rate: 0.3,
            pope_seed: 0,
            policy_embed_dim: policy.embed_dim,
            policy_mem_window: policy.mem_window,
            policy_mem_dim: policy.mem_dim,
            policy_pos_dim: policy.pos_dim,
            policy_hidden: policy.hidden,
            policy_heads: policy.heads,
            policy_max_response_len: policy.max_response_len,
            policy_max_context_len: policy.max_context_len,
            sft_lr: sft.lr,
            sft_batch_size: sft.batch_size,
            sft_epochs: sft.epochs,
            sft_patience: sft.patience,
            sft_val_fraction: sft.val_fraction,
            rm_lr: rm.lr,
            rm_batch_size: rm.batch_size,
            rm_epochs: rm.epochs,
            rm_patience: rm.patience,
            rm_val_fraction: rm.val_fraction,
            rm_embed_dim: rm.model.embed_dim,
            rm_window: rm.model.window,
            rm_hidden: rm.model.hidden,
            rm_heads: rm.model.heads,
            ppo_lr: ppo.lr,
            ppo_batch_size: ppo.batch_size,
            ppo_epochs: ppo.ppo_epochs,
            ppo_minibatch_size: ppo.minibatch_size,
            ppo_iterations: ppo.iterations,
            ppo_clip: ppo.clip_eps,
            ppo_kl_beta: ppo.kl_beta,
            ppo_gamma: ppo.gamma,
            ppo_lambda: ppo.lambda,
            ppo_value_coef: ppo.value_coef,
            ppo_grad_clip: ppo.grad_clip,
            ppo_temperature: ppo.temperature,
            ppo_eval_every: 0,
            w_o: ppo.weights.o,
            w_a: ppo.weights.a,
            w_r: ppo.weights.r,
            w_coarse: ppo.weights.coarse,
            eval_temperature: 1.0,
            eval_seed: 1000,
            eval_pope: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn preset(name: &str) -> CliResult<Self> {
        match name {
            "desk" => Self::parse(DESK, "preset desk"),
            "paper-appendix-b" => Self::parse(PAPER_APPENDIX_B, "preset paper-appendix-b"),
            other => Err(CliError::Config(format!(
                "unknown preset {other:?}; valid: desk, paper-appendix-b"
            ))),
        }
    }

    /// A preset name or a path to a config file.
    pub fn load(name: &str) -> CliResult<Self> {
        if matches!(name, "desk" | "paper-appendix-b") {
            return Self::preset(name);
        }
        let path = Path::new(name);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn limits(&self) -> SceneLimits {
        SceneLimits {
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            max_attributes: self.max_attributes,
            max_relations: self.max_relations,
            ..SceneLimits::default()
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            embed_dim: self.policy_embed_dim,
            mem_window: self.policy_mem_window,
            mem_dim: self.policy_mem_dim,
            pos_dim: self.policy_pos_dim,
            hidden: self.policy_hidden,
            heads: self.policy_heads,
            max_response_len: self.policy_max_response_len,
            max_context_len: self.policy_max_context_len,
        }
    }

    pub fn sft(&self) -> SftConfig {
        SftConfig {
            lr: self.sft_lr,
            batch_size: self.sft_batch_size,
            epochs: self.sft_epochs,
            patience: self.sft_patience,
            val_fraction: self.sft_val_fraction,
            seed: self.seed,
            ..SftConfig::default()
        }
    }

    pub fn rm(&self) -> RmTrainConfig {
        RmTrainConfig {
            lr: self.rm_lr,
            batch_size: self.rm_batch_size,
            epochs: self.rm_epochs,
            patience: self.rm_patience,
            val_fraction: self.rm_val_fraction,
            seed: self.seed,
            model: RewardModelConfig {
                embed_dim: self.rm_embed_dim,
                window: self.rm_window,
                hidden: self.rm_hidden,
                heads: self.rm_heads,
                ..RewardModelConfig::default()
            },
            ..RmTrainConfig::default()
        }
    }

    pub fn ppo(&self, seed: u64) -> PpoConfig {
        PpoConfig {
            clip_eps: self.ppo_clip,
            kl_beta: self.ppo_kl_beta,
            gamma: self.ppo_gamma,
            lambda: self.ppo_lambda,
            lr: self.ppo_lr,
            batch_size: self.ppo_batch_size,
            ppo_epochs: self.ppo_epochs,
            minibatch_size: self.ppo_minibatch_size,
            value_coef: self.ppo_value_coef,
            grad_clip: self.ppo_grad_clip,
            iterations: self.ppo_iterations,
            temperature: self.ppo_temperature,
            seed,
            weights: RewardWeights {
                o: self.w_o,
                a: self.w_a,
                r: self.w_r,
                coarse: self.w_coarse,
            },
            eval_every: self.ppo_eval_every,
            ..PpoConfig::default()
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            temperature: self.eval_temperature,
            seed: self.eval_seed,
            pope: self.eval_pope,
            pope_seed: self.pope_seed,
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let wrap = |e: fgaif_core::Error| CliError::Config(e.to_string());
        self.policy().validate().map_err(wrap)?;
        self.sft().validate().map_err(wrap)?;
        self.rm().validate().map_err(wrap)?;
        self.ppo(self.seed).validate().map_err(wrap)?;
        if !(0.0..=1.0).contains(&self.injection_rate) || !(0.0..=1.0).contains(&self.rm_injection_rate) {
            return Err(CliError::Config("injection rates must lie in [0, 1]".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }
}
