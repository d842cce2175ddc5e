mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use truncflm::bootstrap::BootstrapOptions;
use truncflm::flm::BicForm;
use truncflm::simstudy::SimConfig;
use truncflm::truncated::{Method, DEFAULT_THETA_MIN};
use truncflm::tuning::{LambdaGrid, PredictionTarget, RiskScale, SlopeVarianceBasis, TuningOptions};
use truncflm::Error;

use config::{BootstrapConfig, FitConfig, PredictConfig, RunConfig, SimulateConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;
const EXIT_CONFIG: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "truncflm", version, about = "Truncated functional linear regression")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a truncated model, selecting λ unless `--lambda` is given.
    Fit(FitArgs),
    /// Run only the λ selection and write its diagnostics.
    Tune(FitArgs),
    /// Run the simulation study for one model.
    Simulate(SimulateArgs),
    /// Residual bootstrap bands around a fitted slope.
    Bootstrap(BootstrapArgs),
    /// Predict responses for new curves from a saved fit.
    Predict(PredictArgs),
    /// Replay a `config.json` written by an earlier run.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write results here instead of the directory recorded in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    A,
    B,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BicArg {
    AsPrinted,
    Standard,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    AsPrinted,
    PerObservation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Surrogate,
    Observed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SlopeVarianceArg {
    Truncated,
    FullDomain,
}

#[derive(Args, Debug)]
struct TuningArgs {
    /// Candidate component counts, e.g. `2..9`.
    #[arg(long, value_parser = parse_m_range)]
    m_range: Option<(usize, usize)>,
    /// `LO:HI:COUNT` relative to var(y), or a comma-separated list of λ values.
    #[arg(long, value_parser = parse_lambda_grid)]
    lambda_grid: Option<LambdaGrid>,
    #[arg(long, value_enum)]
    bic: Option<BicArg>,
    #[arg(long, value_enum)]
    risk_scale: Option<ScaleArg>,
    #[arg(long, value_enum)]
    prediction_target: Option<TargetArg>,
    #[arg(long, value_enum)]
    slope_variance: Option<SlopeVarianceArg>,
    /// Surrogate frequency indices, comma-separated.
    #[arg(long, value_delimiter = ',')]
    bsimp_k: Option<Vec<u32>>,
    /// Surrogate terms kept from `1, sin, cos`.
    #[arg(long)]
    bsimp_terms: Option<usize>,
    #[arg(long)]
    penalty_exponent: Option<f64>,
    /// Method B: refit on `[0, θ̂]` instead of truncating the pilot.
    #[arg(long)]
    refit: bool,
}

impl TuningArgs {
    fn options(&self) -> TuningOptions {
        let mut o = TuningOptions::default();
        if let Some((lo, hi)) = self.m_range {
            o.m_min = lo;
            o.m_max = hi;
        }
        if let Some(g) = &self.lambda_grid {
            o.lambda_grid = g.clone();
        }
        if let Some(b) = self.bic {
            o.bic = match b {
                BicArg::AsPrinted => BicForm::AsPrinted,
                BicArg::Standard => BicForm::Standard,
            };
        }
        if let Some(s) = self.risk_scale {
            o.risk_scale = match s {
                ScaleArg::AsPrinted => RiskScale::AsPrinted,
                ScaleArg::PerObservation => RiskScale::PerObservation,
            };
        }
        if let Some(t) = self.prediction_target {
            o.prediction_target = match t {
                TargetArg::Surrogate => PredictionTarget::Surrogate,
                TargetArg::Observed => PredictionTarget::Observed,
            };
        }
        if let Some(v) = self.slope_variance {
            o.slope_variance = match v {
                SlopeVarianceArg::Truncated => SlopeVarianceBasis::Truncated,
                SlopeVarianceArg::FullDomain => SlopeVarianceBasis::FullDomain,
            };
        }
        if let Some(k) = &self.bsimp_k {
            o.bsimp_k = k.clone();
        }
        if let Some(t) = self.bsimp_terms {
            o.bsimp_terms = t;
        }
        if let Some(p) = self.penalty_exponent {
            o.truncation.penalty_exponent = p;
        }
        o.truncation.refit |= self.refit;
        o
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    #[arg(long, value_enum, default_value = "b")]
    method: MethodArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_THETA_MIN)]
    theta_min: f64,
    #[arg(long, default_value_t = 1.0)]
    theta_max: f64,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: PathBuf,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        let method = match self.method {
            MethodArg::A => Method::A,
            MethodArg::B => Method::B,
        };
        let mut c = FitConfig::new(self.curves.clone(), self.responses.clone(), method, self.out.clone());
        c.lambda = self.lambda;
        c.theta_min = self.theta_min;
        c.theta_max = self.theta_max;
        c.tuning = self.tuning.options();
        c
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Slope model 1, 2 or 3.
    #[arg(long, default_value_t = 1)]
    model: u8,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snr: Option<f64>,
    /// Fit every replicate at this λ instead of selecting one.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    boot_seed: u64,
    /// Keep `θ̂` fixed across replicates.
    #[arg(long)]
    freeze_theta: bool,
    /// Rerun the λ selection in every replicate.
    #[arg(long)]
    reselect_lambda: bool,
    /// Store every replicate curve in `bootstrap.json`.
    #[arg(long)]
    keep_replicates: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// `fit.json` from an earlier `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_m_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got '{s}'"))?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    let lo: usize = lo.trim().parse().map_err(|e| format!("'{lo}': {e}"))?;
    let hi: usize = hi.trim().parse().map_err(|e| format!("'{hi}': {e}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("empty or invalid range {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn parse_lambda_grid(s: &str) -> Result<LambdaGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|e| format!("'{}': {e}", parts[0]))?;
        let hi: f64 = parts[1].trim().parse().map_err(|e| format!("'{}': {e}", parts[1]))?;
        let count: usize = parts[2].trim().parse().map_err(|e| format!("'{}': {e}", parts[2]))?;
        return Ok(LambdaGrid::Relative { lo, hi, count });
    }
    if parts.len() != 1 {
        return Err(format!("expected LO:HI:COUNT or a comma list, got '{s}'"));
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(LambdaGrid::Explicit)
}

fn build_config(command: Command) -> Result<RunConfig, Error> {
    Ok(match command {
        Command::Fit(a) => RunConfig::Fit(a.config()),
        Command::Tune(a) => RunConfig::Tune(a.config()),
        Command::Simulate(a) => {
            let mut sim = SimConfig {
                model_id: a.model,
                fixed_lambda: a.lambda,
                tuning: a.tuning.options(),
                ..SimConfig::default()
            };
            if let Some(n) = a.n {
                sim.n = n;
            }
            if let Some(r) = a.replicates {
                sim.replicates = r;
            }
            if let Some(s) = a.seed {
                sim.seed = s;
            }
            if let Some(s) = a.snr {
                sim.snr = s;
            }
            RunConfig::Simulate(SimulateConfig { sim, out: a.out })
        }
        Command::Bootstrap(a) => RunConfig::Bootstrap(BootstrapConfig {
            fit: a.fit.config(),
            bootstrap: BootstrapOptions {
                replicates: a.reps,
                seed: a.boot_seed,
                freeze_theta: a.freeze_theta,
                reselect_lambda: a.reselect_lambda,
                keep_replicates: a.keep_replicates,
                ..BootstrapOptions::default()
            },
        }),
        Command::Predict(a) => RunConfig::Predict(PredictConfig {
            fit: a.fit,
            curves: a.curves,
            out: a.out,
        }),
        Command::Run { config, out } => {
            let text = std::fs::read_to_string(config)?;
            let mut c: RunConfig = serde_json::from_str(&text)?;
            if let Some(out) = out {
                match &mut c {
                    RunConfig::Fit(f) | RunConfig::Tune(f) => f.out = out,
                    RunConfig::Simulate(s) => s.out = out,
                    RunConfig::Bootstrap(b) => b.fit.out = out,
                    RunConfig::Predict(p) => p.out = out,
                }
            }
            c
        }
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Parse { .. } | Error::Json(_) | Error::Dimension { .. } => EXIT_PARSE,
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = build_config(cli.command).and_then(|c| commands::execute(&c));
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
