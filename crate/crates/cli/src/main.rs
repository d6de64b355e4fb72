//! `physnet` command-line experiments: data generation, training,
//! evaluation, rollouts, control and system identification.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Variant, OUT_ENV};
use error::CliError;
use manifest::{OutputDir, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "physnet", version, about = "Learn and evaluate physics-structured dynamics models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from the configured plant.
    GenData(RunArgs),
    /// Train a model and write it with its loss history.
    Train(RunArgs),
    /// Held-out prediction errors of a model.
    Eval(RunArgs),
    /// Uncontrolled predictions against the plant and their valid prediction time.
    Rollout(RunArgs),
    /// Tracking or swing-up episode driven by a model.
    Control(RunArgs),
    /// Fit the plant's base inertial parameters.
    Sysid(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Rollout(_) => "rollout",
            Command::Control(_) => "control",
            Command::Sysid(_) => "sysid",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GenData(a)
            | Command::Train(a)
            | Command::Eval(a)
            | Command::Rollout(a)
            | Command::Control(a)
            | Command::Sysid(a) => a,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the PHYSNET_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
fn parse_seed(s: &str) -> Result<u64, String> {
    let seed: u64 = s.parse().map_err(|e| format!("{e}"))?;
    if seed > i64::MAX as u64 {
        return Err(format!("seed must not exceed {}", i64::MAX));
    }
    Ok(seed)
}

/// The config with command-line overrides applied, and where to write.
fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.seed > i64::MAX as u64 {
        return Err(CliError::Config(format!("seed must not exceed {}", i64::MAX)));
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    cfg.train.seed = cfg.seed;
    cfg.apply_default_loss();
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config(format!("no output directory: pass --out, set {OUT_ENV} or set `out`")))?;
    // the stored config must not redirect a re-run onto these outputs
    cfg.out = None;
    Ok((cfg, out))
}

fn run(command: &Command, cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    match command {
        Command::GenData(_) => commands::gen_data(cfg, out),
        Command::Train(_) => commands::cmd_train(cfg, out),
        Command::Eval(_) => commands::cmd_eval(cfg, out),
        Command::Rollout(_) => commands::cmd_rollout(cfg, out),
        Command::Control(_) => commands::cmd_control(cfg, out),
        Command::Sysid(_) => commands::cmd_sysid(cfg, out),
    }
}

fn fail(command: &str, err: &CliError, out: Option<&OutputDir>) -> ExitCode {
    let record = err.record(command);
    let text = toml::to_string(&record).unwrap_or_else(|_| format!("kind = \"{}\"\n", record.kind));
    eprint!("{text}");
    if let Some(dir) = out {
        let _ = std::fs::write(dir.path("error.toml"), &text);
    }
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let (cfg, out_path) = match resolve(cli.command.args()) {
        Ok(r) => r,
        Err(e) => return fail(name, &e, None),
    };
    let mut out = match OutputDir::create(&out_path) {
        Ok(o) => o,
        Err(e) => return fail(name, &e, None),
    };
    let result = cfg.to_toml().and_then(|text| {
        out.write(CONFIG_FILE, &text)?;
        run(&cli.command, &cfg, &mut out)?;
        Ok(text)
    });
    match result {
        Ok(text) => match out.finish(name, cfg.seed, &text) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => fail(name, &e, None),
        },
        Err(e) => fail(name, &e, Some(&out)),
    }
}
