//! The grounded captioning policy: model, sampling, scoring and SFT.

pub mod captioner;
pub mod model;
pub mod rollout;
pub mod sft;

pub use captioner::PolicyCaptioner;
pub use model::{Policy, PolicyConfig, POLICY_KIND};
pub use rollout::{
    context_ids, evaluate_logprobs_values, next_token_distributions, row_seed, sample_batch,
    sample_response, SampleRequest, Scored, Terminal, Trajectory,
};
pub use sft::{
    encode_examples, mean_token_ce, sft_train, Encoded, SftConfig, SftEpoch, SftExample, SftReport,
};

#[cfg(test)]
pub(crate) mod tests;
