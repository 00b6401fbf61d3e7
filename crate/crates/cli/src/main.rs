use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusedreg::io::{fit_command, simulate_command, CommandError, RunConfig, Stage};
use fusedreg::Error;

#[derive(Parser)]
#[command(name = "fusedreg", version, about = "Linear regression fusing a target sample with dichotomized external outcomes")]
struct Cli {
    /// Worker threads for bootstrap and Monte Carlo loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the three estimators to a dataset and report bootstrap intervals.
    Fit(FitArgs),
    /// Run a Monte Carlo study and print bias / SSD / ESE / CR95 tables.
    Simulate(SimArgs),
}

#[derive(Args)]
struct FitArgs {
    /// JSON run configuration; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pooled CSV with a source-flag column.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target_data: Option<PathBuf>,
    #[arg(long)]
    external_data: Option<PathBuf>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long, allow_hyphen_values = true)]
    cutoff: Option<f64>,
    /// normal, logistic or mix:w,mu,sd;...
    #[arg(long)]
    model: Option<String>,
    /// constant, logistic or sim2-ratio
    #[arg(long)]
    propensity: Option<String>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standardize continuous covariates and drop extreme rows.
    #[arg(long)]
    standardize: bool,
    /// Directory for estimates.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// sim1 or sim2
    #[arg(long)]
    sim: Option<String>,
    /// Comma-separated scenarios (I, II, III).
    #[arg(long, value_delimiter = ',')]
    scenario: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pooled sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    /// Directory for metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(path: &Option<PathBuf>) -> Result<RunConfig, CommandError> {
    match path {
        Some(p) => RunConfig::from_file(p).map_err(|source| CommandError { stage: Stage::Config, source }),
        None => Ok(RunConfig::default()),
    }
}

fn fit_config(a: FitArgs) -> Result<RunConfig, CommandError> {
    let mut cfg = base_config(&a.config)?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    if a.target_data.is_some() {
        cfg.target_data = a.target_data;
    }
    if a.external_data.is_some() {
        cfg.external_data = a.external_data;
    }
    if let Some(c) = a.covariates {
        cfg.covariates = c;
    }
    if a.cutoff.is_some() {
        cfg.cutoff = a.cutoff;
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(p) = a.propensity {
        cfg.propensity = p;
    }
    if let Some(b) = a.bootstrap {
        cfg.bootstrap_b = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.standardize |= a.standardize;
    if a.out.is_some() {
        cfg.out_dir = a.out;
    }
    Ok(cfg)
}

fn sim_config(a: SimArgs) -> Result<RunConfig, CommandError> {
    let mut cfg = base_config(&a.config)?;
    if let Some(s) = a.sim {
        cfg.simulation = s;
    }
    if let Some(s) = a.scenario {
        cfg.scenarios = s;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(b) = a.bootstrap {
        cfg.sim_bootstrap_b = Some(b);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n_total = n;
    }
    if a.out.is_some() {
        cfg.out_dir = a.out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, CommandError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| CommandError {
            stage: Stage::Config,
            source: Error::Config(format!("thread pool: {e}")),
        })?;
    }
    match cli.command {
        Command::Fit(a) => {
            let out = fit_command(&fit_config(a)?)?;
            for w in &out.warnings {
                log::warn!("{w}");
            }
            Ok(out.text)
        }
        Command::Simulate(a) => Ok(simulate_command(&sim_config(a)?)?.text),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
