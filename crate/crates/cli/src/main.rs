//! Command-line front end: reproducible experiment runs driven by a small
//! `section.key = value` config file plus overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use sfc::config::RunConfig;
use sfc::layout::{self, resolve_out_root};
use sfc::{commands, CommandKind};

#[derive(Parser)]
#[command(name = "sfc", about = "Successor-feature context meta-RL experiments")]
struct Cli {
    /// Config file of `section.key = value` lines; defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; defaults to $SFC_OUT, then ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `section.key=value` assignments applied after the file.
    #[arg(long = "override", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: CommandKind,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_text(&layout::read_text(path)?)?;
    }
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out_root = resolve_out_root(cli.out.clone());
    commands::run_command(&cli.command, &cfg, &out_root)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
