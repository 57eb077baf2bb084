use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meco::sim::{AccessMode, Policy, SweepAxis};

mod commands;
mod config;

/// Energy-optimal resource allocation for multiuser mobile-edge offloading.
#[derive(Debug, Parser)]
#[command(name = "meco", version)]
struct Cli {
    /// Experiment config with [system], [distribution] and [sweep] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one TDMA scenario and print its report as JSON.
    SolveTdma(SolveArgs),
    /// Solve one OFDMA scenario and print its report as JSON.
    SolveOfdma(SolveArgs),
    /// Monte-Carlo sweep over one parameter; writes CSV.
    Sweep(SweepArgs),
    /// Compare the solvers with brute-force oracles on small instances.
    Validate(ValidateArgs),
    /// Draw one scenario from the configured distribution.
    GenScenario(GenArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Scenario file: TOML, or a users CSV combined with the config's [system].
    scenario: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// T, F, F_prime, K or N.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Repeat for several policies.
    #[arg(long, value_enum)]
    policy: Vec<PolicyArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 10)]
    instances: usize,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Tdma)]
    mode: ModeArg,
    /// Index of the realization drawn from the seed.
    #[arg(long, default_value_t = 0)]
    realization: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Toml)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Optimal,
    Suboptimal,
    Equal,
    Greedy,
    OfdmaSeq,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Optimal => Policy::Optimal,
            PolicyArg::Suboptimal => Policy::Suboptimal,
            PolicyArg::Equal => Policy::Equal,
            PolicyArg::Greedy => Policy::Greedy,
            PolicyArg::OfdmaSeq => Policy::OfdmaSeq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Tdma,
    Ofdma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Toml,
    Csv,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Solver(#[from] meco::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(e) if e.is_infeasible() => 1,
            CliError::Check(_) => 1,
            CliError::Solver(meco::Error::Invalid(_)) => 2,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Solver(_) => 3,
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = config::Config::load(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::SolveTdma(a) => {
            let policy = a.policy.map_or(Policy::Optimal, Policy::from);
            emit(out, &commands::solve(&a.scenario, &config, AccessMode::Tdma, policy)?)
        }
        Command::SolveOfdma(a) => {
            let policy = a.policy.map_or(Policy::OfdmaSeq, Policy::from);
            emit(out, &commands::solve(&a.scenario, &config, AccessMode::Ofdma, policy)?)
        }
        Command::Sweep(a) => {
            let axis_name = a.axis.or(config.sweep.axis.clone()).ok_or_else(|| CliError::Config("no sweep axis given".into()))?;
            let axis: SweepAxis = axis_name.parse().map_err(|e: meco::Error| CliError::Config(e.to_string()))?;
            let values = a
                .values
                .or(config.sweep.values.clone())
                .ok_or_else(|| CliError::Config("no sweep values given".into()))?;
            let policies: Vec<Policy> = if a.policy.is_empty() {
                match &config.sweep.policies {
                    Some(names) => names
                        .iter()
                        .map(|n| n.parse().map_err(|e: meco::Error| CliError::Config(e.to_string())))
                        .collect::<Result<_, _>>()?,
                    None => vec![Policy::Optimal],
                }
            } else {
                a.policy.into_iter().map(Policy::from).collect()
            };
            let realizations = a.realizations.or(config.sweep.realizations).unwrap_or(200);
            let spec = commands::SweepSpec { axis, values, policies, realizations, seed: a.seed };
            emit(out, &commands::sweep(&config, &spec)?)
        }
        Command::Validate(a) => {
            let (table, ok) = commands::validate(a.seed, a.instances)?;
            emit(out, &table)?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Check("some validation checks failed".into()))
            }
        }
        Command::GenScenario(a) => {
            let mode = match a.mode {
                ModeArg::Tdma => AccessMode::Tdma,
                ModeArg::Ofdma => AccessMode::Ofdma,
            };
            let scenario = commands::generate(&config, mode, a.seed, a.realization)?;
            let text = match a.format {
                FormatArg::Toml => scenario.to_toml_string()?,
                FormatArg::Csv => config::users_to_csv(&scenario.users)?,
            };
            emit(out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("meco: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
