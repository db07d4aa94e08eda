#![allow(dead_code)]

use std::path::Path;

use fgaif_cli::commands;
use fgaif_cli::{CliResult, RunConfig};
use fgaif_core::reward::RewardKind;

/// A few-second pipeline: small corpora, one epoch, two PPO iterations.
pub const TINY: &str = "\
seeds = [0, 1]
sft_scenes = 200
rm_scenes = 200
rl_scenes = 100
eval_scenes = 40
sft_epochs = 1
rm_epochs = 1
ppo_iterations = 2
ppo_batch_size = 8
ppo_eval_every = 1
";

pub fn tiny() -> RunConfig {
    RunConfig::parse(TINY, "tiny").unwrap()
}

pub fn all_kinds() -> Vec<RewardKind> {
    RewardKind::FINE.into_iter().chain([RewardKind::Coarse]).collect()
}

/// Every stage up to trained reward models.
pub fn prepare(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    commands::gen_world(cfg, out)?;
    commands::sft(cfg, out)?;
    commands::collect(cfg, out, false)?;
    for kind in all_kinds() {
        commands::train_rm(cfg, out, kind)?;
    }
    Ok(())
}
