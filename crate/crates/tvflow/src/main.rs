use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvflow::config::{self, Experiment, RunConfig};
use tvflow::{experiments, io, Error, Result};

/// Simulator and verification harness for the stochastic total variation
/// flow with linear multiplicative noise.
#[derive(Debug, Parser)]
#[command(name = "tvflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory and write norms and fields.
    Simulate(Common),
    /// Monte Carlo checks: moment bounds, positivity, variational inequality, stability.
    Verify(Common),
    /// First-passage times of |X|_N against the extinction lower bound.
    Extinction(Common),
    /// Flow a PGM image and write the result as PGM.
    Denoise(Common),
    /// Resolvent contraction and rescaled-operator monotonicity checks.
    Appendix(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Further overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn overrides(args: &[String], map: &mut BTreeMap<String, String>) -> Result<()> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, got `{arg}`")))?;
        match key.split_once('=') {
            Some((k, v)) => config::insert(map, k, v)?,
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
                config::insert(map, key, v)?;
            }
        }
    }
    Ok(())
}

fn run(experiment: Experiment, args: Common) -> Result<bool> {
    let mut map = BTreeMap::new();
    if let Some(path) = &args.config {
        config::parse_into(&io::read_text(path)?, &mut map)?;
    }
    if let Some(seed) = args.seed {
        map.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &args.out {
        map.insert("output_dir".into(), out.display().to_string());
    }
    overrides(&args.overrides, &mut map)?;
    let cfg = RunConfig::from_map(experiment, &map)?;
    let outcome = experiments::run(&cfg)?;
    let report = io::read_text(&outcome.output_dir.join("report.txt"))?;
    print!("{report}");
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Simulate(a) => (Experiment::Simulate, a),
        Command::Verify(a) => (Experiment::Verify, a),
        Command::Extinction(a) => (Experiment::Extinction, a),
        Command::Denoise(a) => (Experiment::Denoise, a),
        Command::Appendix(a) => (Experiment::Appendix, a),
    };
    match run(experiment, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("tvflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
