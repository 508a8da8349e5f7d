//! `semcom`: batch front end for the semantic-communication vehicle
//! counting simulator. One command per process; every run writes a
//! manifest with the fully resolved configuration before any computation,
//! so the manifest plus the seed determine every output byte (timestamps
//! appear only inside the manifest).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use config::{parse_config, write_manifest, FileConfig};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Semantic-communication vehicle counting simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; omitted keys take the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for the manifest and all artifacts.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the encoder, channel codec, and decoder jointly.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory (images/ + annotations/); never modified.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Override the model-init and shuffle seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training channel SNR in dB.
        #[arg(long, value_name = "REAL")]
        snr_db: Option<f64>,
    },
    /// Evaluate a checkpoint on the dataset's test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Checkpoint produced by `train`.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Override the evaluation noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate at this SNR instead of the checkpoint's channel SNR.
        #[arg(long, value_name = "REAL")]
        snr_db: Option<f64>,
    },
    /// Scan the residual weight p on the dataset's test split.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "REAL")]
        snr_db: Option<f64>,
        /// Comma-separated residual weights, e.g. "0,0.2,0.4,0.6,0.8,1".
        #[arg(long, value_name = "LIST")]
        p_grid: Option<String>,
    },
    /// Compare raw image bytes against the encoded density-map payload.
    Overhead {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
    },
}

fn parse_p_grid(s: &str) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        let v: f64 = tok
            .parse()
            .map_err(|_| anyhow::anyhow!("invalid p-grid entry '{}': not a number", tok))?;
        grid.push(v);
    }
    Ok(grid)
}

/// The input dataset directory is read-only for every command; writing
/// artifacts into it would break that, so reject the overlap up front.
fn check_out_not_dataset(out: &Path, dataset: &Path) -> Result<()> {
    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    if canon(out) == canon(dataset) {
        bail!(
            "output directory {} is the dataset directory; choose a different --out",
            out.display()
        );
    }
    Ok(())
}

fn prepare(common: &CommonArgs, name: &str, apply: impl FnOnce(&mut FileConfig)) -> Result<FileConfig> {
    let mut cfg = parse_config(common.config.as_deref())?;
    apply(&mut cfg);
    write_manifest(&common.out, name, &cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth { common, seed } => {
            let cfg = prepare(&common, "synth", |c| {
                if let Some(s) = seed {
                    c.synth.seed = s;
                }
            })?;
            commands::synth(&cfg, &common.out)
        }
        Command::Train { common, dataset, seed, snr_db } => {
            check_out_not_dataset(&common.out, &dataset)?;
            let cfg = prepare(&common, "train", |c| {
                if let Some(s) = seed {
                    c.train.seed = s;
                }
                if let Some(snr) = snr_db {
                    c.channel.snr_db = snr;
                }
            })?;
            commands::train(&cfg, &dataset, &common.out)
        }
        Command::Eval { common, dataset, checkpoint, seed, snr_db } => {
            check_out_not_dataset(&common.out, &dataset)?;
            let cfg = prepare(&common, "eval", |c| {
                if let Some(s) = seed {
                    c.eval.seed = s;
                }
                if let Some(snr) = snr_db {
                    c.eval.snr_db = Some(snr);
                }
            })?;
            commands::eval(&cfg, &dataset, &checkpoint, &common.out)
        }
        Command::Sweep { common, dataset, checkpoint, seed, snr_db, p_grid } => {
            check_out_not_dataset(&common.out, &dataset)?;
            let grid = p_grid.as_deref().map(parse_p_grid).transpose()?;
            let cfg = prepare(&common, "sweep", |c| {
                if let Some(s) = seed {
                    c.eval.seed = s;
                }
                if let Some(snr) = snr_db {
                    c.eval.snr_db = Some(snr);
                }
                if let Some(g) = &grid {
                    c.eval.p_grid = g.clone();
                }
            })?;
            commands::sweep(&cfg, &dataset, &checkpoint, &common.out, grid.as_deref())
        }
        Command::Overhead { common, dataset } => {
            check_out_not_dataset(&common.out, &dataset)?;
            let cfg = prepare(&common, "overhead", |_| {})?;
            commands::overhead_cmd(&cfg, &dataset, &common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
