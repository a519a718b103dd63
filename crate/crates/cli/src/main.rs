mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use tmae::config::{Config, TrainMode};
use tmae::data::Split;

/// Temporal masked-autoencoder pretraining and reduced-EF classification.
#[derive(Parser, Debug)]
#[command(name = "tmae", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Config file with [section] headers and key = value lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.max_epochs=10 (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Root seed (same as --set train.seed=N).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Clips processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Render a synthetic pulsating-disk dataset and its manifest.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_clips: usize,
    },
    /// Masked-autoencoder pretraining on the train split.
    Pretrain {
        /// Continue from a `pretrain_last.ckpt`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many total epochs; the schedule is unchanged.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Supervised fine-tuning from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        pretrained: PathBuf,
        /// base | end_to_end
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Align sampled windows with end diastole.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Metrics of a fine-tuned checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Probability of reduced EF for a single `.tnsr` clip.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// Source frame rate (defaults to data.synth_fps).
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Grid over contrastive and masking settings: pretrain, fine-tune and
    /// evaluate at every point.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        tau_p: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        tau_m: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        ratio: Vec<f64>,
    },
}

fn parse() -> Result<Cli, clap::Error> {
    let keys = Config::help_text();
    let cmd = Cli::command()
        .after_help(keys.clone())
        .mut_subcommands(|c| c.after_help(keys.clone()));
    let matches = cmd.try_get_matches()?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
