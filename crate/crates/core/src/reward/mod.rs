//! Typed segment reward models and the coarse sequence-level baseline.

pub mod model;
pub mod rewards;
pub mod train;

pub use model::{Query, RewardKind, RewardModel, RewardModelConfig};
pub use rewards::{
    hallucination_probabilities, segment_rewards, segment_rewards_batch, RewardModels,
    SegmentRewards,
};
pub use train::{
    batch_loss, evaluate, examples_for, split_indices, train_reward_model, EpochStats, EvalStats,
    RmExample, RmTrainConfig, TrainingCurve,
};
