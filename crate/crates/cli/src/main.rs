//! Batch driver: one config file drives the whole pipeline; positional
//! command names override the config's command list, flags and `RBMLAB_*`
//! environment variables override individual keys.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use commands::{run_all, Context};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "rbmlab",
    about = "Heat kernels, exit times, and boundary local time of reflecting Brownian motion on 2-D domains",
    long_about = None
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, env = "RBMLAB_CONFIG")]
    config: PathBuf,

    /// Output directory (overrides the config).
    #[arg(long, env = "RBMLAB_OUT")]
    out: Option<PathBuf>,

    /// Monte Carlo seed (overrides the config).
    #[arg(long, env = "RBMLAB_SEED")]
    seed: Option<u64>,

    /// Worker thread count; affects speed, never results.
    #[arg(long, env = "RBMLAB_THREADS")]
    threads: Option<usize>,

    /// Commands to run (defaults to the config's `commands` list).
    commands: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = Some(seed);
    }
    let commands = if cli.commands.is_empty() { cfg.commands.clone() } else { cli.commands };
    if commands.is_empty() {
        anyhow::bail!(
            "no commands selected; list them on the command line or in the config (available: {})",
            config::COMMANDS.join(", ")
        );
    }
    let problems = cfg.validate(&commands);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("config error: {p}");
        }
        anyhow::bail!("{} configuration error(s); nothing was run", problems.len());
    }
    let out_dir = cli.out.unwrap_or_else(|| cfg.out_dir.clone());
    let mut ctx = Context::new(cfg, out_dir)?;
    let results = run_all(&mut ctx, &commands);
    let mut ok = true;
    for (cmd, result) in &results {
        match result {
            Ok(()) => println!("{cmd}: ok"),
            Err(e) => {
                ok = false;
                println!("{cmd}: FAILED: {e}");
            }
        }
    }
    for path in &ctx.written {
        println!("wrote {}", commands::relative_display(path));
    }
    Ok(ok)
}
