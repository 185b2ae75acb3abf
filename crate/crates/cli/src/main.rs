//! `betamix` command-line tool.
//!
//! Every command writes `summary.json` into the output directory plus its CSV
//! tables; on failure it prints a JSON error record to stderr, writes it to
//! `error.json` when the output directory is usable, and exits nonzero.

mod commands;
mod summary;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use betamix::io::{AnalysisConfig, Engine};
use betamix::sensitivity::SensitivityParam;

#[derive(Debug, Parser)]
#[command(name = "betamix", version, about = "Bayesian beta mixed regression: Laplace, MCMC, likelihood and prior sensitivity")]
struct Cli {
    /// TOML analysis configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulated data and MCMC chains.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Engine used by `fit`.
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Laplace,
    Mcmc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    /// 3 chains x 500,000 iterations.
    Default,
    /// 3 chains x 50,000 iterations.
    Reduced,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParamArg {
    Phi,
    Tau,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model (Laplace by default, `--engine mcmc` to sample).
    Fit,
    /// Sample the posterior by Metropolis-within-Gibbs.
    Mcmc {
        /// Replace the configured iteration counts with a preset.
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
    },
    /// Maximum likelihood with profile intervals.
    Ml {
        /// Interval level, e.g. 0.95.
        #[arg(long)]
        level: Option<f64>,
    },
    /// Fit several models and tabulate DIC, LML and CPO.
    Compare,
    /// Hellinger-distance prior-sensitivity scan.
    Sensitivity {
        /// Precision parameter to scan.
        #[arg(long, value_enum)]
        param: Option<ParamArg>,
        /// Comma-separated prior Hellinger distances, increasing.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Gamma prior for a random-effect precision from a range statement.
    Elicit {
        /// Half-width R of the interval (-R, R).
        #[arg(long)]
        range: Option<f64>,
        /// Degrees of freedom of the implied t marginal.
        #[arg(long)]
        df: Option<f64>,
        /// Probability assigned to (-R, R).
        #[arg(long)]
        coverage: Option<f64>,
    },
    /// Write a synthetic dataset.
    Simulate {
        /// Comma-separated rows per group.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Mcmc { .. } => "mcmc",
            Command::Ml { .. } => "ml",
            Command::Compare => "compare",
            Command::Sensitivity { .. } => "sensitivity",
            Command::Elicit { .. } => "elicit",
            Command::Simulate { .. } => "simulate",
        }
    }
}

/// Failure with a stable machine-readable kind.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl From<betamix::Error> for CliError {
    fn from(e: betamix::Error) -> Self {
        Self { kind: e.kind(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { kind: "io", message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { kind: "io", message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> CliError {
    CliError { kind: "config", message: message.into() }
}

/// Reads the config file (if any), resolves relative data paths against it and applies flags.
fn resolve_config(cli: &Cli) -> Result<AnalysisConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg = parse_config(&text)?;
            if let Some(src) = cfg.data.as_mut() {
                if src.path.is_relative() {
                    let base = path.parent().unwrap_or(Path::new("."));
                    src.path = base.join(&src.path);
                }
            }
            cfg
        }
        None => AnalysisConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.engine {
        cfg.engine = match e {
            EngineArg::Laplace => Engine::Laplace,
            EngineArg::Mcmc => Engine::Mcmc,
        };
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.dir = d.clone();
    }
    match &cli.command {
        Command::Mcmc { protocol: Some(p) } => {
            let preset = match p {
                ProtocolArg::Default => betamix::mcmc::McmcConfig::default(),
                ProtocolArg::Reduced => betamix::mcmc::McmcConfig::reduced(),
            };
            cfg.mcmc = betamix::mcmc::McmcConfig { n_chains: cfg.mcmc.n_chains, ..preset };
        }
        Command::Ml { level: Some(l) } => cfg.ml.level = *l,
        Command::Sensitivity { param, targets } => {
            if let Some(p) = param {
                cfg.sensitivity.param = match p {
                    ParamArg::Phi => SensitivityParam::Phi,
                    ParamArg::Tau => SensitivityParam::Tau,
                };
            }
            if let Some(t) = targets {
                cfg.sensitivity.targets = t.clone();
            }
        }
        Command::Elicit { range, df, coverage } => {
            if let Some(r) = range {
                cfg.elicit.range = *r;
            }
            if let Some(d) = df {
                cfg.elicit.df = *d;
            }
            if let Some(c) = coverage {
                cfg.elicit.coverage = *c;
            }
        }
        Command::Simulate { sizes: Some(s) } => cfg.simulate.sizes = s.clone(),
        _ => {}
    }
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<AnalysisConfig, CliError> {
    toml::from_str(text).map_err(|e| config_error(e.to_string()))
}

fn dispatch(cli: &Cli, cfg: &AnalysisConfig) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit => match cfg.engine {
            Engine::Laplace => commands::fit(cfg),
            Engine::Mcmc => commands::mcmc(cfg),
        },
        Command::Mcmc { .. } => commands::mcmc(cfg),
        Command::Ml { .. } => commands::ml(cfg),
        Command::Compare => commands::compare(cfg),
        Command::Sensitivity { .. } => commands::sensitivity(cfg),
        Command::Elicit { .. } => commands::elicit(cfg),
        Command::Simulate { .. } => commands::simulate(cfg),
    }
}

fn report_error(command: &str, out_dir: Option<&Path>, err: &CliError) -> ExitCode {
    let record = serde_json::json!({
        "status": "error",
        "command": command,
        "error": { "kind": err.kind, "message": err.message },
    });
    eprintln!("{record}");
    if let Some(dir) = out_dir {
        if dir.is_dir() {
            let _ = betamix::io::write_atomic(dir.join("error.json"), format!("{record:#}\n").as_bytes());
        }
    }
    ExitCode::from(if err.kind == "usage" || err.kind == "config" { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError { kind: "usage", message: e.render().to_string().trim().to_string() };
            return report_error("", None, &err);
        }
    };
    let name = cli.command.name();
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return report_error(name, cli.out_dir.as_deref(), &e),
    };
    match dispatch(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(name, Some(&cfg.output.dir), &e),
    }
}
