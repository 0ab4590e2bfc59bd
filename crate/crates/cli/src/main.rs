//! `spectral-distill`: limiting risks, optimal shrinkage rules and
//! self-distillation parameters from a JSON model config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spectral_distill::spectra::{default_nodes, SpikedModel};
use spectral_distill::Error;

use commands::Run;
use config::{Format, RunConfig};
use output::{config_hash, render_csv, render_json, write_output, Output};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Lib(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Lib(e) => match e {
                Error::Domain(_) | Error::Argument(_) => 2,
                Error::InvalidModel(_) | Error::Assumption { .. } | Error::Unsupported(_) => 3,
                Error::Structural(_) | Error::Numerical(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "spectral-distill", version, about = "Spectral shrinkage risks and optimal self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Densities and atoms of the MP and one-spike measures.
    Measure,
    /// Limiting risk breakdowns over a rule family or fixed rules.
    Risk,
    /// Optimal prediction and estimation rules with self-checks.
    Optimal,
    /// Self-distillation parameters of the optimal rules.
    SdParams,
    /// Multi-client optimum.
    Federated,
    /// Monte Carlo risks against their limits.
    Simulate,
    /// Limiting (and optionally simulated) risks over a parameter sweep.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Measure => "measure",
            Command::Risk => "risk",
            Command::Optimal => "optimal",
            Command::SdParams => "sd-params",
            Command::Federated => "federated",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        if let Some(sim) = cfg.simulate.as_mut() {
            sim.seed = seed;
        }
        if let Some(sim) = cfg.sweep.as_mut().and_then(|s| s.simulate.as_mut()) {
            sim.seed = seed;
        }
    }
    if cli.out.is_some() {
        cfg.out = cli.out.as_ref().map(|p| p.display().to_string());
    }
    if cli.format.is_some() {
        cfg.format = cli.format;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = load(cli)?;
    let nodes = cfg.nodes.unwrap_or_else(default_nodes);
    if nodes < 16 {
        return Err(CliError::Config(format!("nodes must be at least 16, got {nodes}")));
    }
    cfg.nodes = Some(nodes);
    let format = cfg.format.unwrap_or(match cli.command {
        Command::Optimal | Command::Federated => Format::Json,
        _ => Format::Csv,
    });
    cfg.format = Some(format);
    // The destination does not affect results, so it stays out of the hash.
    let out = cfg.out.take().map(PathBuf::from);
    let canonical = serde_json::to_string(&cfg).expect("config serializes");
    let hash = config_hash(&canonical);

    let model = SpikedModel::from_params(cfg.model.clone())?;
    let run = Run { cfg, model, nodes };
    let result = match cli.command {
        Command::Measure => commands::measure(&run),
        Command::Risk => commands::risk(&run),
        Command::Optimal => commands::optimal(&run),
        Command::SdParams => commands::sd_params(&run),
        Command::Federated => commands::federated(&run),
        Command::Simulate => commands::simulate(&run),
        Command::Sweep => commands::sweep(&run),
    }?;
    let text = match (format, result) {
        (Format::Json, r) => render_json(r, cli.command.name(), &hash),
        (Format::Csv, Output::Tables(t)) => render_csv(&t, &hash),
        (Format::Csv, Output::Json(_)) => {
            return Err(CliError::Config(format!("{} has no CSV form; use --format json", cli.command.name())))
        }
    };
    write_output(out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
