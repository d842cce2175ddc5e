//! Simulation study: random curves from a decaying trigonometric expansion,
//! three truncated slope models scaled to a target signal-to-noise ratio,
//! and a parallel replicate runner with summary tables.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::CurveSet;
use crate::numerics::{inner_product, trig_basis, Grid, DEFAULT_GRID_SIZE};
use crate::truncated::{Method, ThetaGrid, DEFAULT_THETA_MIN};
use crate::tuning::{Tuner, TuningOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub grid_size: usize,
    pub n_components: usize,
    pub decay: f64,
    pub model_id: u8,
    pub snr: f64,
    pub noise_sd: f64,
    pub theta0: f64,
    pub a0: f64,
    pub replicates: usize,
    pub seed: u64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub methods: Vec<Method>,
    /// Skip `λ` selection and fit every replicate at this value.
    pub fixed_lambda: Option<f64>,
    pub tuning: TuningOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            grid_size: DEFAULT_GRID_SIZE,
            n_components: 25,
            decay: 0.25,
            model_id: 1,
            snr: 26.25,
            noise_sd: 1.0,
            theta0: 0.5,
            a0: 0.0,
            replicates: 100,
            seed: 1,
            theta_min: DEFAULT_THETA_MIN,
            theta_max: 1.0,
            methods: vec![Method::A, Method::B],
            fixed_lambda: None,
            tuning: TuningOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n < 5 {
            return bad(format!("n must be at least 5, got {}", self.n));
        }
        if self.grid_size < 3 || self.n_components == 0 || self.replicates == 0 {
            return bad("grid_size, n_components and replicates must be positive".into());
        }
        if !(1..=3).contains(&self.model_id) {
            return bad(format!("model_id must be 1, 2 or 3, got {}", self.model_id));
        }
        if !(self.theta0 > 0.0 && self.theta0 < 1.0) {
            return bad(format!("theta0 must lie in (0, 1), got {}", self.theta0));
        }
        if !(self.snr > 0.0 && self.noise_sd >= 0.0 && self.decay >= 0.0 && self.a0.is_finite()) {
            return bad("snr must be positive; noise_sd and decay non-negative".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("fixed lambda must be finite and non-negative, got {l}"));
            }
        }
        self.tuning.validate()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.grid_size)
    }

    /// Variance of the coefficient on basis function `k` (1-based).
    pub fn component_variance(&self, k: usize) -> f64 {
        (-(k as f64 - 1.0) * self.decay).exp()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Curves,
    Noise,
}

/// Independent generator for one replicate: the study seed keys a ChaCha
/// stream whose index encodes `(replicate, purpose)`.
pub fn replicate_rng(seed: u64, replicate: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let purpose = match stream {
        Stream::Curves => 0,
        Stream::Noise => 1,
    };
    rng.set_stream(2 * replicate + purpose);
    rng
}

/// One draw of `(Z_1, …, Z_K)`, `Z_k ~ N(0, exp{−(k−1)·decay})`.
pub fn gen_coefficients<R: Rng>(config: &SimConfig, rng: &mut R) -> Vec<f64> {
    (1..=config.n_components)
        .map(|k| config.component_variance(k).sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `X_i = Σ_k Z_ik η_k`.
pub fn gen_x<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<CurveSet> {
    let grid = config.grid()?;
    let basis = (1..=config.n_components)
        .map(|k| trig_basis(k, &grid))
        .collect::<Result<Vec<_>>>()?;
    let g = grid.len();
    let mut values = vec![0.0; config.n * g];
    for row in values.chunks_mut(g) {
        for (e, z) in basis.iter().zip(gen_coefficients(config, rng)) {
            for (v, ek) in row.iter_mut().zip(e) {
                *v += z * ek;
            }
        }
    }
    CurveSet::from_flat(grid, config.n, values)
}

/// Unscaled slope shape of model 1, 2 or 3 with change point `theta0`.
pub fn slope_shape(model_id: u8, theta0: f64, grid: &Grid) -> Result<Vec<f64>> {
    use std::f64::consts::PI;
    let f: fn(f64, f64) -> f64 = match model_id {
        1 => |t, th| if t <= th { 1.0 } else { 0.0 },
        2 => |t, th| if t < th { (2.0 * PI * t).sin() } else { 0.0 },
        3 => |t, th| if t < th { (2.0 * PI * t).cos() + 1.0 } else { 0.0 },
        other => return Err(Error::Config(format!("unknown model {other}"))),
    };
    Ok(grid.points().iter().map(|&t| f(t, theta0)).collect())
}

/// `Var(∫ b X) = Σ_k v_k ⟨b, η_k⟩²` under the generating covariance.
pub fn signal_variance(config: &SimConfig, b: &[f64], grid: &Grid) -> Result<f64> {
    let mut var = 0.0;
    for k in 1..=config.n_components {
        let c = inner_product(b, &trig_basis(k, grid)?, grid)?;
        var += config.component_variance(k) * c * c;
    }
    Ok(var)
}

/// Model slope `c·b_shape` with `c` chosen so that
/// `Var(∫ b₀ X) = snr · noise_sd²`.
pub fn model_slope(config: &SimConfig, grid: &Grid) -> Result<Vec<f64>> {
    let shape = slope_shape(config.model_id, config.theta0, grid)?;
    let var = signal_variance(config, &shape, grid)?;
    if !(var > 0.0) {
        return Err(Error::DegenerateShape);
    }
    let target = config.snr * config.noise_sd.powi(2).max(f64::MIN_POSITIVE);
    let c = (target / var).sqrt();
    Ok(shape.into_iter().map(|v| c * v).collect())
}

/// `y_i = a₀ + ∫ b₀ X_i + ε_i`, `ε_i ~ N(0, noise_sd²)`.
pub fn gen_y<R: Rng>(curves: &CurveSet, b0: &[f64], a0: f64, noise_sd: f64, rng: &mut R) -> Result<Vec<f64>> {
    curves
        .iter()
        .map(|x| {
            let e: f64 = rng.sample(StandardNormal);
            Ok(a0 + inner_product(b0, x, curves.grid())? + noise_sd * e)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub theta_hat: f64,
    pub ise: f64,
    pub m: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub a: Option<MethodOutcome>,
    pub b: Option<MethodOutcome>,
    pub ise_notrunc: Option<f64>,
    pub notrunc_m: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub count: usize,
    pub mean_theta: f64,
    pub sd_theta: f64,
    pub mean_ise: f64,
    pub median_ise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub method_a: Option<MethodSummary>,
    pub method_b: Option<MethodSummary>,
    pub notrunc_mean_ise: Option<f64>,
    pub notrunc_median_ise: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub b0: Vec<f64>,
    pub records: Vec<ReplicateRecord>,
    pub summary: StudySummary,
}

fn ise(b_hat: &[f64], b0: &[f64], grid: &Grid) -> Result<f64> {
    let d: Vec<f64> = b_hat.iter().zip(b0).map(|(a, b)| a - b).collect();
    inner_product(&d, &d, grid)
}

/// Data for replicate `r`.
pub fn replicate_data(config: &SimConfig, b0: &[f64], r: usize) -> Result<(CurveSet, Vec<f64>)> {
    let curves = gen_x(config, &mut replicate_rng(config.seed, r as u64, Stream::Curves))?;
    let y = gen_y(
        &curves,
        b0,
        config.a0,
        config.noise_sd,
        &mut replicate_rng(config.seed, r as u64, Stream::Noise),
    )?;
    Ok((curves, y))
}

fn run_replicate(config: &SimConfig, b0: &[f64], thetas: &ThetaGrid, r: usize) -> ReplicateRecord {
    let mut record = ReplicateRecord {
        replicate: r,
        a: None,
        b: None,
        ise_notrunc: None,
        notrunc_m: None,
        error: None,
    };
    if let Err(e) = fill_replicate(config, b0, thetas, r, &mut record) {
        record.error = Some(e.to_string());
    }
    record
}

fn fill_replicate(
    config: &SimConfig,
    b0: &[f64],
    thetas: &ThetaGrid,
    r: usize,
    record: &mut ReplicateRecord,
) -> Result<()> {
    let (curves, y) = replicate_data(config, b0, r)?;
    let grid = curves.grid();
    let tuner = Tuner::new(&curves, &y, thetas, &config.tuning)?;
    let pilot = tuner.pilot();
    record.ise_notrunc = Some(ise(&pilot.slope, b0, grid)?);
    record.notrunc_m = Some(pilot.m);
    for &method in &config.methods {
        let fit = match config.fixed_lambda {
            Some(lambda) => tuner.fit_at_lambda(method, lambda)?,
            None => tuner.fit(method)?.fit,
        };
        let outcome = MethodOutcome {
            theta_hat: fit.theta_hat,
            ise: ise(&fit.b_hat, b0, grid)?,
            m: fit.m,
            lambda: fit.lambda,
        };
        match method {
            Method::A => record.a = Some(outcome),
            Method::B => record.b = Some(outcome),
        }
    }
    Ok(())
}

pub fn run_study(config: &SimConfig) -> Result<StudyReport> {
    config.validate()?;
    let grid = config.grid()?;
    let b0 = model_slope(config, &grid)?;
    let thetas = ThetaGrid::from_grid(&grid, config.theta_min, config.theta_max)?;
    let records: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &b0, &thetas, r))
        .collect();
    let summary = summarize(&records);
    Ok(StudyReport {
        config: config.clone(),
        b0,
        records,
        summary,
    })
}

/// [`run_study`] on a dedicated pool of `threads` workers.
pub fn run_study_with_threads(config: &SimConfig, threads: usize) -> Result<StudyReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_study(config))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with an `n − 1` denominator.
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

fn summarize_method(outcomes: Vec<&MethodOutcome>) -> Option<MethodSummary> {
    if outcomes.is_empty() {
        return None;
    }
    let thetas: Vec<f64> = outcomes.iter().map(|o| o.theta_hat).collect();
    let ises: Vec<f64> = outcomes.iter().map(|o| o.ise).collect();
    Some(MethodSummary {
        count: outcomes.len(),
        mean_theta: mean(&thetas),
        sd_theta: sd(&thetas),
        mean_ise: mean(&ises),
        median_ise: median(&ises),
    })
}

/// Summaries over the records that completed without error.
pub fn summarize(records: &[ReplicateRecord]) -> StudySummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let notrunc: Vec<f64> = ok.iter().filter_map(|r| r.ise_notrunc).collect();
    StudySummary {
        method_a: summarize_method(ok.iter().filter_map(|r| r.a.as_ref()).collect()),
        method_b: summarize_method(ok.iter().filter_map(|r| r.b.as_ref()).collect()),
        notrunc_mean_ise: (!notrunc.is_empty()).then(|| mean(&notrunc)),
        notrunc_median_ise: (!notrunc.is_empty()).then(|| median(&notrunc)),
        failures: records.len() - ok.len(),
    }
}

fn fmt_opt(s: &Option<MethodSummary>, f: impl Fn(&MethodSummary) -> String) -> String {
    s.as_ref().map(f).unwrap_or_else(|| "-".into())
}

/// Mean (sd) of `θ̂` per model and method.
pub fn table1(reports: &[StudyReport]) -> String {
    let mut out = String::new();
    writeln!(out, "Mean and standard deviation of theta estimates").unwrap();
    writeln!(out, "{:<8} {:>20} {:>20}", "Model", "Method A", "Method B").unwrap();
    for r in reports {
        let cell = |m: &MethodSummary| format!("{:.4} ({:.4})", m.mean_theta, m.sd_theta);
        writeln!(
            out,
            "{:<8} {:>20} {:>20}",
            r.config.model_id,
            fmt_opt(&r.summary.method_a, cell),
            fmt_opt(&r.summary.method_b, cell)
        )
        .unwrap();
    }
    out
}

/// Mean and median integrated squared error per model and method.
pub fn table2(reports: &[StudyReport]) -> String {
    let mut out = String::new();
    for (title, pick_method, pick_none) in [
        (
            "Mean integrated squared error",
            (|m: &MethodSummary| m.mean_ise) as fn(&MethodSummary) -> f64,
            (|s: &StudySummary| s.notrunc_mean_ise) as fn(&StudySummary) -> Option<f64>,
        ),
        (
            "Median integrated squared error",
            |m: &MethodSummary| m.median_ise,
            |s: &StudySummary| s.notrunc_median_ise,
        ),
    ] {
        writeln!(out, "{title}").unwrap();
        writeln!(out, "{:<8} {:>14} {:>14} {:>14}", "Model", "Method A", "Method B", "No trunc.").unwrap();
        let none_cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        for r in reports {
            let cell = |m: &MethodSummary| format!("{:.4}", pick_method(m));
            writeln!(
                out,
                "{:<8} {:>14} {:>14} {:>14}",
                r.config.model_id,
                fmt_opt(&r.summary.method_a, cell),
                fmt_opt(&r.summary.method_b, cell),
                none_cell(pick_none(&r.summary))
            )
            .unwrap();
        }
        writeln!(out).unwrap();
    }
    out
}

/// One row per replicate, empty cells for missing values.
pub fn write_records_csv<W: Write>(records: &[ReplicateRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replicate",
        "theta_a",
        "theta_b",
        "ise_a",
        "ise_b",
        "ise_notrunc",
        "m_a",
        "m_b",
        "lambda_a",
        "lambda_b",
        "error",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            opt(r.a.as_ref().map(|o| o.theta_hat.to_string())),
            opt(r.b.as_ref().map(|o| o.theta_hat.to_string())),
            opt(r.a.as_ref().map(|o| o.ise.to_string())),
            opt(r.b.as_ref().map(|o| o.ise.to_string())),
            opt(r.ise_notrunc.map(|v| v.to_string())),
            opt(r.a.as_ref().map(|o| o.m.to_string())),
            opt(r.b.as_ref().map(|o| o.m.to_string())),
            opt(r.a.as_ref().map(|o| o.lambda.to_string())),
            opt(r.b.as_ref().map(|o| o.lambda.to_string())),
            opt(r.error.clone()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}
