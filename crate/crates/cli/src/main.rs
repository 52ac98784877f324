//! `mpcg gen | train | bench`: problem generation, policy training and
//! benchmarking from a TOML experiment config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpcg::experiment::{cmd_bench, cmd_gen, cmd_train, ExperimentConfig, ExperimentError, ScaleKind};
use mpcg::precision::EmulationMode;

#[derive(Parser)]
#[command(name = "mpcg", version, about = "Mixed-precision CG with learned precision selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test problem sets as Matrix Market files plus a manifest.
    Gen(Common),
    /// Train a Q-learning precision policy on the training set.
    Train(Common),
    /// Compare the greedy policy against fp64 CG on the test set.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policy file; defaults to `<out>/policy.json`.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EmulationMode>,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<ScaleKind>,
}

fn parse_mode(s: &str) -> Result<EmulationMode, String> {
    s.parse()
}

fn parse_scale(s: &str) -> Result<ScaleKind, String> {
    s.parse()
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf, PathBuf), ExperimentError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(mode) = self.mode {
            cfg.cg.emulation_mode = mode;
        }
        if let Some(scale) = self.scale {
            cfg.scale = scale;
            cfg.sizes = None;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        let out = cfg.out.clone();
        let policy = self.policy.clone().unwrap_or_else(|| out.join("policy.json"));
        Ok((cfg, out, policy))
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Gen(c) => {
            let (cfg, out, _) = c.resolve()?;
            let manifest = cmd_gen(&cfg, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train(c) => {
            let (cfg, out, policy) = c.resolve()?;
            let q = cmd_train(&cfg, &out, &policy)?;
            println!("trained {} episodes; policy at {}", q.trained_episodes, policy.display());
        }
        Command::Bench(c) => {
            let (cfg, out, policy) = c.resolve()?;
            let report = cmd_bench(&cfg, &policy, &out)?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // bad arguments count as configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
