use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adaptattn::cli::{cmd_eval, cmd_predict, cmd_stats, cmd_train, Precision};
use adaptattn::{Mode, RunConfig};

#[derive(Parser)]
#[command(
    name = "adaptattn",
    about = "Length-adaptive multi-head attention for sentiment classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Corpus root containing {train,test}/{pos,neg}/*.txt
    #[arg(long)]
    corpus: PathBuf,
    /// Line-oriented `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bin-threshold preset
    #[arg(long, value_enum, default_value = "approach1")]
    mode: Mode,
    /// Output directory for checkpoints, vocabulary and CSVs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Per-bin corpus statistics and length histogram
    Stats {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model and write checkpoint + metrics history
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// RNG seed for initialization and batch shuffling
        #[arg(long)]
        seed: Option<u64>,
        /// Number of training epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to evaluate (defaults to OUT/model.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify a single review
    Predict {
        /// Checkpoint to load
        #[arg(long)]
        checkpoint: PathBuf,
        /// Review text
        text: String,
    },
}

fn run() -> adaptattn::Result<()> {
    let cli = Cli::parse();
    let precision = Precision::from_env()?;
    match cli.command {
        Command::Stats { common } => {
            let cfg = RunConfig::load(common.config.as_deref(), common.mode, None, None)?;
            let stats = cmd_stats(&common.corpus, &cfg, &common.out)?;
            print!("{stats}");
            println!(
                "stats written to {} and {}",
                common.out.join("stats.csv").display(),
                common.out.join("length_histogram.csv").display()
            );
        }
        Command::Train {
            common,
            seed,
            epochs,
        } => {
            let cfg = RunConfig::load(common.config.as_deref(), common.mode, seed, epochs)?;
            let metrics = cmd_train(&common.corpus, &cfg, &common.out, precision)?;
            println!("{metrics}");
        }
        Command::Eval { common, checkpoint } => {
            let cfg = if common.config.is_some() {
                Some(RunConfig::load(
                    common.config.as_deref(),
                    common.mode,
                    None,
                    None,
                )?)
            } else {
                None
            };
            let checkpoint = checkpoint.unwrap_or_else(|| common.out.join("model.ckpt"));
            let metrics = cmd_eval(
                &common.corpus,
                &checkpoint,
                cfg.as_ref(),
                &common.out,
                precision,
            )?;
            println!("{metrics}");
        }
        Command::Predict { checkpoint, text } => {
            let output = cmd_predict(&text, &checkpoint, precision)?;
            println!("{output}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            for line in err.to_string().lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
