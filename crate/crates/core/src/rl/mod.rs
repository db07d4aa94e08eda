//! Reinforcement learning with fine-grained rewards.

pub mod ppo;
pub mod rewards;

pub use ppo::{minibatch_loss, ppo_update, run_fgaif, IterationMetrics, PpoConfig, PpoSample, UpdateStats};
pub use rewards::{
    apply_kl_penalty, assemble_coarse_rewards, assemble_token_rewards, compute_gae,
    normalize_advantages, select_variant, ActiveRewards, ResolvedVariant, RewardWeights,
    TokenRewardVector, Variant,
};
