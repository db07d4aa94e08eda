use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fgaif_cli::commands::{self, EvalTarget};
use fgaif_cli::{CliError, CliResult, RunConfig};
use fgaif_core::reward::RewardKind;

#[derive(Parser)]
#[command(name = "fgaif", version, about = "Fine-grained AI feedback pipeline on a synthetic captioning world")]
struct Cli {
    /// Preset name (desk, paper-appendix-b) or path to a config file.
    #[arg(long, global = true, default_value = "desk")]
    config: String,
    /// Overrides the `seed` key of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "runs/desk")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene corpora, injected SFT corpus and POPE question sets.
    GenWorld,
    /// Supervised fine-tuning of the policy.
    Sft,
    /// Feedback collection into FeedbackRecord JSONL.
    Collect {
        /// Extract facts through the endpoint in FGAIF_ANNOTATOR_URL.
        #[arg(long)]
        remote: bool,
    },
    /// Trains one reward model.
    TrainRm {
        /// o, a, r or coarse.
        #[arg(long)]
        category: String,
    },
    /// PPO fine-tuning under one reward variant.
    TrainPpo {
        /// fgaif, wo_obj, wo_att, wo_rel, wo_aif or w_coarse.
        #[arg(long, default_value = "fgaif")]
        variant: String,
    },
    /// Scores the SFT policy, a trained variant or a checkpoint.
    Eval {
        #[arg(long, conflicts_with = "checkpoint")]
        variant: Option<String>,
        /// Policy checkpoint relative to the run directory.
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// All six variants over the configured seeds.
    Ablate,
}

fn print<T: Serialize>(value: &T) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::GenWorld => print(&commands::gen_world(&cfg, out)?),
        Command::Sft => print(&commands::sft(&cfg, out)?),
        Command::Collect { remote } => print(&commands::collect(&cfg, out, remote)?),
        Command::TrainRm { category } => {
            let kind = RewardKind::parse(&category).map_err(|e| CliError::Config(e.to_string()))?;
            print(&commands::train_rm(&cfg, out, kind)?)
        }
        Command::TrainPpo { variant } => {
            let outcome = commands::train_ppo(&cfg, out, &variant)?;
            print(&outcome.iterations.last())
        }
        Command::Eval { variant, checkpoint } => {
            let target = match (variant, checkpoint) {
                (Some(v), _) => EvalTarget::Variant(v),
                (None, Some(c)) => EvalTarget::Checkpoint(c),
                (None, None) => EvalTarget::Sft,
            };
            print(&commands::eval(&cfg, out, &target)?)
        }
        Command::Ablate => {
            let report = commands::ablate(&cfg, out)?;
            println!("{}", report.table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
