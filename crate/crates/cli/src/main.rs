use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{load_config, parse_n_list, RawConfig};

#[derive(Parser)]
#[command(name = "nhgrem", version, about = "Nonhierarchical GREM solver, simulator and limit-law checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Chain, critical temperatures, critical subsets, constants and irreducibility.
    Analyze,
    /// Free-energy curve, with the exhaustive oracle for n <= 8.
    FreeEnergy,
    /// Extremal configurations over disorder replicas.
    Simulate,
    /// Gibbs tables, pair measures and ultrametric statistics.
    Gibbs,
    /// Limit-law samples from the Ruelle cascade.
    Cascade,
    /// The full comparison suite; exits with 2 if any check fails.
    Compare,
    /// List the builtin models.
    Models,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::FreeEnergy => "free-energy",
            Command::Simulate => "simulate",
            Command::Gibbs => "gibbs",
            Command::Cascade => "cascade",
            Command::Compare => "compare",
            Command::Models => "models",
        }
    }
}

#[derive(Args)]
struct Flags {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `builtin:NAME` or a model JSON file.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Comma-separated system sizes.
    #[arg(long = "N", global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    eps1: Option<f64>,
    #[arg(long, global = true)]
    eps2: Option<f64>,
    /// Gibbs mass covered by pair measures.
    #[arg(long, global = true)]
    coverage: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Enable exhaustive cross-checks.
    #[arg(long, global = true)]
    oracle: bool,
    /// Lower end of the extremal window, relative to a_N.
    #[arg(long, global = true, allow_hyphen_values = true)]
    window_floor: Option<f64>,
    /// Expected cascade points per branch.
    #[arg(long, global = true)]
    points_per_branch: Option<f64>,
    /// Gibbs triples per replica for ultrametric statistics.
    #[arg(long, global = true)]
    triples: Option<usize>,
}

impl Flags {
    fn into_raw(self) -> Result<(Option<PathBuf>, RawConfig), config::ConfigError> {
        let n_list = self.n.as_deref().map(parse_n_list).transpose()?;
        Ok((
            self.config,
            RawConfig {
                model: self.model,
                beta: self.beta,
                n_list,
                seed: self.seed,
                replicas: self.replicas,
                tol: self.tol,
                eps1: self.eps1,
                eps2: self.eps2,
                coverage: self.coverage,
                out: self.out,
                oracle: self.oracle.then_some(true),
                window_floor: self.window_floor,
                points_per_branch: self.points_per_branch,
                triples: self.triples,
            },
        ))
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (file, flags) = cli.flags.into_raw()?;
    let raw = match file {
        Some(path) => RawConfig::from_file(&path)?.overlay(flags),
        None => flags,
    };
    let cfg = load_config(cli.command.name(), raw)?;
    let outcome = commands::run_command(&cfg)?;
    for a in &outcome.artifacts {
        println!("wrote {}", a.display());
    }
    Ok(outcome.all_pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
