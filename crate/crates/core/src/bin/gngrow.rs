use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gngrow::commands;
use gngrow::config::RunConfig;

#[derive(Parser)]
#[command(name = "gngrow", version, about = "Grow convolutional networks with Gauss-Newton scored morphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Alternate training and growth; writes history.csv, model.ckpt and arch_evolution.svg.
    Grow(Common),
    /// Compare moving-average estimates with brute-force loss changes; writes gn_scatter.csv.
    VerifyGn(Common),
    /// Compare learned θ against two baselines on one layer; writes baselines.csv.
    Compare(Common),
    /// Retrain a checkpointed architecture from scratch; writes metrics.json.
    Retrain(Common),
}

fn run(cli: Cli) -> gngrow::Result<()> {
    let (common, which) = match &cli.command {
        Command::Grow(c) => (c, "grow"),
        Command::VerifyGn(c) => (c, "verify-gn"),
        Command::Compare(c) => (c, "compare"),
        Command::Retrain(c) => (c, "retrain"),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let mut progress = |msg: &str| eprintln!("[{which}] {msg}");
    let out = &common.out;
    match cli.command {
        Command::Grow(_) => {
            let r = commands::cmd_grow(&cfg, out, &mut progress)?;
            println!(
                "final widths {:?}, {} parameters; outputs in {}",
                r.net.widths(),
                r.net.parameter_count(),
                out.display()
            );
        }
        Command::VerifyGn(_) => {
            let rows = commands::cmd_verify_gn(&cfg, out, &mut progress)?;
            println!("{} rows written to {}", rows.len(), out.join(commands::SCATTER_FILE).display());
        }
        Command::Compare(_) => {
            let rows = commands::cmd_compare(&cfg, out, &mut progress)?;
            println!("{} rows written to {}", rows.len(), out.join(commands::BASELINES_FILE).display());
        }
        Command::Retrain(_) => {
            let m = commands::cmd_retrain(&cfg, out, &mut progress)?;
            println!("params {}, epochs {}, final accuracy {:.4}", m.params, m.epochs, m.final_acc);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
