use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfbnn::config::{Mode, Profile, RunConfig};
use mfbnn::suites::{self, SUITES};
use mfbnn::{data, pipeline, Error};

#[derive(Parser)]
#[command(name = "mfbnn", version, about = "Multi-fidelity Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Budget profile: paper or desk (overrides the config file).
    #[arg(long)]
    profile: Option<String>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the active-learning loop described by a config file.
    Active {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named benchmark suite, or `all`.
    Bench {
        suite: String,
        #[command(flatten)]
        common: Common,
    },
    /// Predict at query points from a finished run directory.
    Predict {
        /// Directory holding samples.bin (and lowfi.bin).
        #[arg(long)]
        run: PathBuf,
        /// CSV with column `x` or `x1..xd`.
        #[arg(long)]
        points: PathBuf,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status 2 for bad input, 1 for a failed stage.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) => 2,
        Error::Stage { stage: mfbnn::Stage::Data, source } => exit_code(source),
        _ => 1,
    }
}

fn profile(p: &Option<String>) -> mfbnn::Result<Option<Profile>> {
    p.as_deref().map(Profile::parse).transpose()
}

fn out_dir(config: &RunConfig, common: &Common, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn load(path: &Path, common: &Common) -> mfbnn::Result<RunConfig> {
    let mut c = RunConfig::load(path, profile(&common.profile)?)?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn run_config(config: &RunConfig, out: &Path) -> mfbnn::Result<()> {
    let report = suites::execute(config, out)?;
    print!("{}", report.table());
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn bench(suite: &str, common: &Common) -> mfbnn::Result<()> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let profile = profile(&common.profile)?.unwrap_or(Profile::Desk);
    let seed = common.seed.unwrap_or(0);
    // Validate every name before spending time on any run.
    let configs = names
        .iter()
        .map(|n| suites::preset(n, profile, seed))
        .collect::<mfbnn::Result<Vec<_>>>()?;
    let root = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    for (name, config) in names.iter().zip(&configs) {
        let out = if names.len() == 1 { root.clone() } else { root.join(name) };
        println!("== {name} ({}, seed {seed})", profile.name());
        run_config(config, &out)?;
    }
    Ok(())
}

fn predict(run: &Path, points: &Path, out: Option<&Path>) -> mfbnn::Result<()> {
    let loaded = pipeline::load_run(run)?;
    let dim = loaded.header.problem.dim();
    let file = File::open(points)
        .map_err(|e| Error::config(format!("cannot open {}: {e}", points.display())))?;
    let xs = data::read_points(BufReader::new(file), dim)?;
    let preds = loaded.predictor().predict(&xs)?;
    match out {
        Some(p) => pipeline::write_predictions(BufWriter::new(File::create(p)?), &preds, &[]),
        None => pipeline::write_predictions(std::io::stdout().lock(), &preds, &[]),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => load(config, common).and_then(|c| {
            let out = out_dir(&c, common, "out");
            run_config(&c, &out)
        }),
        Command::Active { config, common } => load(config, common).and_then(|mut c| {
            c.mode = Mode::Active;
            c.validate()?;
            let out = out_dir(&c, common, "out");
            run_config(&c, &out)
        }),
        Command::Bench { suite, common } => bench(suite, common),
        Command::Predict { run, points, out } => predict(run, points, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
