//! Command-line interface.
//!
//! Exit codes: 0 success, 1 failed self-check or output error, 2 bad input
//! or flags, 3 estimation failure.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use caprecap_core::estimators::{Pooling, TmleConfig};
use caprecap_core::model::Method;
use caprecap_core::nuisance::{NoiseMode, OracleNoiseOptions, DEFAULT_TRUNCATION};
use caprecap_core::simulation::{Misspecification, SimConfig, SimNuisance, ALPHA_GRID, A_VALUES};
use caprecap_core::Error as CoreError;

use crate::check::{render_text, run_checks, CheckOptions};
use crate::format::to_json;
use crate::io::{read_capture_file, InputError};
use crate::parallel::run_grid;
use crate::pipeline::{run_estimate, warnings, write_metrics_csv, EstimateError, EstimateOptions};

#[derive(Debug, Parser)]
#[command(name = "caprecap", version, about = "Doubly robust capture-recapture population size estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the capture probability and population size from a CSV file.
    Estimate(EstimateArgs),
    /// Simulation study over intercepts `a` and noise exponents `alpha`.
    Simulate(SimulateArgs),
    /// Simulation over population sizes at fixed noise exponent.
    Sweep(SweepArgs),
    /// Run the built-in invariant checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    #[value(name = "plug_in", alias = "pi")]
    PlugIn,
    #[value(name = "doubly_robust", alias = "dr")]
    DoublyRobust,
    #[value(name = "tmle")]
    Tmle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::PlugIn => Method::PlugIn,
            MethodArg::DoublyRobust => Method::DoublyRobust,
            MethodArg::Tmle => Method::Tmle,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Pooled,
    PerFold,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed.
    #[arg(long, env = "CAPRECAP_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Nuisance estimates are truncated to [eps, 1 - eps].
    #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
    pub trunc_eps: f64,
    /// Miscoverage level of reported intervals.
    #[arg(long, default_value_t = 0.05)]
    pub alpha_level: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Input CSV with columns y1..yK, x1..xd and optionally q1_hat, q2_hat, q12_hat.
    pub csv: PathBuf,
    #[arg(long, value_enum, default_value = "doubly_robust")]
    pub method: MethodArg,
    /// Cross-fitting folds (default 5; 1 with --no-covariates).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Use the q*_hat columns instead of fitting nuisances.
    #[arg(long)]
    pub external_nuisance: bool,
    /// Impose q1 + q2 - q12 = 1 on two-list nuisance estimates.
    #[arg(long)]
    pub k2_identity: bool,
    /// Ignore covariates (intercept-only nuisances).
    #[arg(long)]
    pub no_covariates: bool,
    #[arg(long, value_enum, default_value = "pooled")]
    pub pooling: PoolingArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NuisanceArg {
    /// Truth perturbed on the logit scale at rate n^-alpha.
    Oracle,
    /// Cross-fitted logistic regressions.
    Logistic,
    /// Truth with one nuisance of each pair set to 0.5.
    Misspecified,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    PerFunction,
    PerUnit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    #[value(name = "q1_q12")]
    Q1Q12,
    #[value(name = "q1_gamma")]
    Q1Gamma,
    #[value(name = "q2_q12")]
    Q2Q12,
    #[value(name = "q2_gamma")]
    Q2Gamma,
}

impl From<ScenarioArg> for Misspecification {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Q1Q12 => Misspecification::Q1Q12,
            ScenarioArg::Q1Gamma => Misspecification::Q1Gamma,
            ScenarioArg::Q2Q12 => Misspecification::Q2Q12,
            ScenarioArg::Q2Gamma => Misspecification::Q2Gamma,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimShared {
    /// Replications per cell.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    /// Methods to run (comma list).
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["plug_in", "doubly_robust", "tmle"])]
    pub methods: Vec<MethodArg>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub nuisance: NuisanceArg,
    /// Folds for logistic nuisances.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "per-function")]
    pub noise: NoiseArg,
    /// Misspecification scenario for --nuisance misspecified.
    #[arg(long, value_enum, default_value = "q1_q12")]
    pub scenario: ScenarioArg,
    /// Impose q1 + q2 - q12 = 1 on oracle-noise nuisances.
    #[arg(long)]
    pub k2_identity: bool,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Intercepts (comma list).
    #[arg(long = "a", value_delimiter = ',', allow_hyphen_values = true, default_value = "-1.758")]
    pub a: Vec<f64>,
    /// Noise exponents (comma list); `inf` gives exact nuisances.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub alpha: Vec<f64>,
    /// Use the full grid of intercepts and noise exponents.
    #[arg(long)]
    pub grid: bool,
    /// Population size.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[command(flatten)]
    pub shared: SimShared,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Population sizes (comma list).
    #[arg(long, value_delimiter = ',', default_value = "5000,10000,15000,20000,25000")]
    pub n_values: Vec<usize>,
    /// Intercepts (comma list).
    #[arg(long = "a", value_delimiter = ',', allow_hyphen_values = true, default_value = "-2.513,-1.758,-0.66")]
    pub a: Vec<f64>,
    /// Noise exponent.
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[command(flatten)]
    pub shared: SimShared,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Smaller sample sizes and fewer repetitions.
    #[arg(long)]
    pub quick: bool,
    /// Machine-readable report.
    #[arg(long)]
    pub json: bool,
    #[arg(long, env = "CAPRECAP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("estimation failed: {0}")]
    Estimation(CoreError),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Usage(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Output(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Input(i) => CliError::Input(i),
            EstimateError::Estimation(CoreError::InvalidConfig(m)) => CliError::Usage(m),
            EstimateError::Estimation(c) => CliError::Estimation(c),
        }
    }
}

fn threads(t: Option<u64>) -> Option<usize> {
    t.map(|t| t as usize)
}

fn check_level(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha-level {alpha} must lie in (0, 1)")))
    }
}

fn cmd_estimate(args: &EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    check_level(args.common.alpha_level)?;
    let input = read_capture_file(&args.csv)?;
    let opts = EstimateOptions {
        method: args.method.into(),
        folds: args.folds.unwrap_or(if args.no_covariates { 1 } else { 5 }),
        epsilon: args.common.trunc_eps,
        alpha: args.common.alpha_level,
        seed: args.common.seed,
        external_nuisance: args.external_nuisance,
        k2_identity: args.k2_identity,
        no_covariates: args.no_covariates,
        pooling: match args.pooling {
            PoolingArg::Pooled => Pooling::Pooled,
            PoolingArg::PerFold => Pooling::PerFold,
        },
    };
    let report = run_estimate(&input, &opts)?;
    for w in warnings(&report) {
        writeln!(err, "warning: {w}")?;
    }
    out.write_all(to_json(&report).as_bytes())?;
    Ok(())
}

fn sim_config(shared: &SimShared, n: usize, a: f64, alpha: f64) -> SimConfig {
    let nuisance = match shared.nuisance {
        NuisanceArg::Oracle => SimNuisance::Oracle(OracleNoiseOptions {
            mode: match shared.noise {
                NoiseArg::PerFunction => NoiseMode::PerFunction,
                NoiseArg::PerUnit => NoiseMode::PerUnit,
            },
            enforce_k2_identity: shared.k2_identity,
            recohere: false,
        }),
        NuisanceArg::Logistic => SimNuisance::Logistic { folds: shared.folds },
        NuisanceArg::Misspecified => SimNuisance::Misspecified(shared.scenario.into()),
    };
    let mut methods: Vec<Method> = Vec::new();
    for m in &shared.methods {
        let m = Method::from(*m);
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    SimConfig {
        n_population: n,
        a,
        alpha_noise: alpha,
        n_reps: shared.reps as usize,
        methods,
        seed: shared.common.seed,
        ci_alpha: shared.common.alpha_level,
        nuisance,
        epsilon: shared.common.trunc_eps,
        tmle: TmleConfig {
            k2_variant: true,
            ..TmleConfig::default()
        },
    }
}

fn run_sim(shared: &SimShared, configs: Vec<SimConfig>, out: &mut dyn Write) -> Result<(), CliError> {
    for c in &configs {
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let rows = run_grid(&configs, threads(shared.common.threads)).map_err(CliError::Estimation)?;
    match &shared.out {
        Some(path) => write_metrics_csv(&rows, std::fs::File::create(path)?)?,
        None => write_metrics_csv(&rows, out)?,
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (a_values, alphas) = if args.grid {
        (A_VALUES.to_vec(), ALPHA_GRID.to_vec())
    } else {
        (args.a.clone(), args.alpha.clone())
    };
    let configs = a_values
        .iter()
        .flat_map(|&a| alphas.iter().map(move |&alpha| (a, alpha)))
        .map(|(a, alpha)| sim_config(&args.shared, args.n, a, alpha))
        .collect();
    run_sim(&args.shared, configs, out)
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let configs = args
        .a
        .iter()
        .flat_map(|&a| args.n_values.iter().map(move |&n| (a, n)))
        .map(|(a, n)| sim_config(&args.shared, n, a, args.alpha))
        .collect();
    run_sim(&args.shared, configs, out)
}

fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let opts = CheckOptions {
        quick: args.quick,
        seed: args.seed,
        threads: threads(args.threads),
        inject_fault: args.inject_fault,
    };
    let results = run_checks(&opts).map_err(CliError::Estimation)?;
    if args.json {
        out.write_all(to_json(&results).as_bytes())?;
    } else {
        out.write_all(render_text(&results).as_bytes())?;
    }
    match results.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

/// Execute a parsed command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, out, err),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Check(a) => cmd_check(a, out),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    match run(&cli, &mut out, &mut err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
