use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adasparse::cli::{self, TrainOverrides};
use adasparse::training::{init_thread_pool, Method};

/// Multi-domain CTR models with domain-adaptive pruning.
///
/// Set ADASPARSE_THREADS to cap worker threads; results do not depend on it.
#[derive(Parser)]
#[command(name = "adasparse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset split 4:1:1 by timestamp.
    GenData {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train a model on a gen-data style directory.
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Directory holding schema.toml, train.csv and dev.csv.
        #[arg(long)]
        data: PathBuf,
        /// none, binarization, scaling or fusion.
        #[arg(long)]
        method: Option<Method>,
        /// Lower sparsity bound [default: 0.15]
        #[arg(long)]
        r_min: Option<f64>,
        /// Upper sparsity bound [default: 0.25]
        #[arg(long)]
        r_max: Option<f64>,
        /// Initial sigmoid slope [default: 0.1]
        #[arg(long)]
        alpha_init: Option<f64>,
        /// Final sigmoid slope [default: 5]
        #[arg(long)]
        alpha_max: Option<f64>,
        /// Factor scale [default: 2]
        #[arg(long)]
        beta: Option<f64>,
        /// Soft threshold [default: 0.25]
        #[arg(long)]
        epsilon: Option<f64>,
        /// Adam learning rate [default: 0.001]
        #[arg(long)]
        lr: Option<f64>,
        /// [default: 256]
        #[arg(long)]
        batch_size: Option<usize>,
        /// [default: 10]
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated hidden widths [default: 128,64,32]
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// [default: 8]
        #[arg(long)]
        embed_dim: Option<usize>,
    },
    /// Evaluate a checkpoint on a CSV file.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Export per-domain masks and their pairwise Jaccard overlap.
    InspectMasks {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Domain ids as they appear in the CSV (multi-field ids joined with '|').
        #[arg(long, value_delimiter = ',', required = true)]
        domains: Vec<String>,
    },
}

fn run(cli: Cli) -> adasparse::Result<()> {
    match cli.command {
        Command::GenData { shared } => {
            let spec = cli::read_dataset_spec(shared.config.as_deref())?;
            let s = cli::gen_data(&spec, shared.seed.unwrap_or(0), &shared.out)?;
            println!("train={} dev={} test={} domains={}", s.train, s.dev, s.test, s.domains);
        }
        Command::Train {
            shared,
            data,
            method,
            r_min,
            r_max,
            alpha_init,
            alpha_max,
            beta,
            epsilon,
            lr,
            batch_size,
            epochs,
            hidden,
            embed_dim,
        } => {
            let config = TrainOverrides {
                seed: shared.seed,
                method,
                r_min,
                r_max,
                alpha_init,
                alpha_max,
                beta,
                epsilon,
                lr,
                batch_size,
                epochs,
                hidden,
                embed_dim,
            }
            .apply(cli::read_train_config(shared.config.as_deref())?)?;
            let outcome = cli::train_cmd(&config, &data, &shared.out)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(e) = outcome.history.epochs.last() {
                println!("epochs={} train_loss={}", outcome.history.epochs.len(), e.train_loss);
            }
            println!("checkpoint={}", shared.out.join(cli::CHECKPOINT_FILE).display());
        }
        Command::Eval { shared, checkpoint, data } => {
            let report = cli::eval_cmd(&checkpoint, &data, &shared.out)?;
            print!("{}", report.to_text());
        }
        Command::InspectMasks {
            shared,
            checkpoint,
            data,
            domains,
        } => {
            let report = cli::inspect_masks(&checkpoint, &data, &domains, &shared.out)?;
            for (a, b, l, j) in &report.jaccard {
                println!("jaccard[{a},{b}].layer{l}={j}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_thread_pool();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
