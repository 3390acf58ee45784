use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbcd::datasets::ToySpec;
use rbcd_cli::config::{ExperimentConfig, RawConfig};
use rbcd_cli::experiment::{format_summary, gen_toy, run_experiment, summarize, sweep_blocks};
use rbcd_cli::CliError;

#[derive(Parser)]
#[command(name = "rbcd-exp", version, about = "GIST vs randomized block-coordinate descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a toy train/test pair in LIBSVM format.
    GenToy {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        t: usize,
        #[arg(long, default_value_t = 1000)]
        nt: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standardize with training statistics before writing.
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured solver over all replicates.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: RawConfig,
    },
    /// Importance-sampling RBCD over several block sizes.
    SweepBlocks {
        #[arg(long)]
        config: PathBuf,
        /// Block sizes d_i.
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        sizes: Vec<usize>,
        #[command(flatten)]
        overrides: RawConfig,
    },
    /// Recompute the summary from existing trace files.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenToy { n, d, t, nt, seed, standardize, out } => gen_toy(&ToySpec::new(n, nt, d, t, seed), standardize, &out),
        Command::Run { config, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let output = run_experiment(&cfg)?;
            print!("{}", format_summary(&output.summary));
            Ok(())
        }
        Command::SweepBlocks { config, sizes, overrides } => {
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let output = sweep_blocks(&cfg, &sizes)?;
            println!("block_size  blocks  reached  median_flops_to_10x");
            for row in &output.rows {
                let median = row.flops_to_10x_median.map_or("-".to_string(), |v| format!("{v:.4e}"));
                println!("{:>10}  {:>6}  {:>4}/{:<2}  {median}", row.block_size, row.blocks, row.reached, row.replicates);
            }
            Ok(())
        }
        Command::Summarize { dir } => {
            print!("{}", format_summary(&summarize(&dir)?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
