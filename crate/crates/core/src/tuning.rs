//! Selection of the penalty weight `λ`.
//!
//! A parametric surrogate `b̃_simp` is fitted to the data and its noiseless
//! responses `Ȳ*_i = ǎ + ∫ b̃_simp X_i` stand in for the truth. For every
//! candidate `θ` we compute a prediction risk `S_Y(θ)` and a slope risk
//! `S_b(θ)` for reconstructing `b̃_simp`; for every `λ` the penalised
//! minimiser `θ_λ` of `S_Y(θ) + λθ²` gets a Laplace-style variance `V(λ)`,
//! and `λ` is chosen to minimise the Gaussian-smoothed slope risk
//! `P_b(λ) = ∫ S_b(θ) N(θ; θ_λ, V(λ)) dθ`.
//!
//! For Method A the whole procedure is repeated for each number of
//! components `m` and `m` is chosen by BIC on the resulting fits.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flm::{bic, bic_select_projection, fit_projection, BicForm, BicRow, PilotFit, DEFAULT_M_RANGE, EIGEN_FLOOR};
use crate::fpca::{CurveSet, Projection};
use crate::numerics::{inner_product, mean, trapezoid_weights, weighted_dot, Grid};
use crate::truncated::{
    argmin_first, first_local_min, fit_method_a_cached, fit_method_b_with, Method, ProjectionCache, ThetaGrid,
    TruncatedFit, TruncationOptions,
};

/// Lower clamp for the estimated curvature of the risk curve.
pub const CURVATURE_FLOOR: f64 = 1e-8;

const SINGULAR_TOL: f64 = 1e-10;

/// Scaling of the risk surrogates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskScale {
    /// `S_Y` as a sum over observations and coefficient variances `σ̂²/τ_j`
    /// without a `1/n` factor.
    AsPrinted,
    /// `S_Y` divided by `n` and coefficient variances `σ̂²/(nτ_j)`, so that
    /// `S_Y(θ) + λθ²` matches the fitting criterion `n⁻¹ RSS(θ) + λθ²`.
    #[default]
    PerObservation,
}

/// Response the surrogate prediction error is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionTarget {
    /// Noiseless surrogate responses `Ȳ*_i`.
    #[default]
    Surrogate,
    /// Observed responses `Y_i`.
    Observed,
}

/// Eigenvalues used in the variance term of the Method B slope risk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeVarianceBasis {
    /// `τ_j^θ` of the truncated domain.
    #[default]
    Truncated,
    /// `τ_j^1` of the full domain.
    FullDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaGrid {
    /// `count` log-spaced values on `[lo, hi] × var(y)`.
    Relative { lo: f64, hi: f64, count: usize },
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Relative {
            lo: 1e-5,
            hi: 1e2,
            count: 25,
        }
    }
}

impl LambdaGrid {
    pub fn resolve(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            LambdaGrid::Explicit(values) => {
                if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config("lambda values must be finite and non-negative".into()));
                }
                Ok(values.clone())
            }
            &LambdaGrid::Relative { lo, hi, count } => {
                if !(lo > 0.0 && hi >= lo && count >= 1) {
                    return Err(Error::Config(format!("bad relative lambda grid {lo}..{hi} x{count}")));
                }
                let var = variance(y).max(f64::MIN_POSITIVE);
                Ok(log_space(lo * var, hi * var, count))
            }
        }
    }
}

pub(crate) fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// `n⁻¹ Σ (y_i − ȳ)²`.
pub(crate) fn variance(y: &[f64]) -> f64 {
    let m = mean(y);
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningOptions {
    pub m_min: usize,
    pub m_max: usize,
    pub lambda_grid: LambdaGrid,
    /// Candidate frequency indices `k` of the surrogate
    /// `c₀ + c₁ sin(2^k πt) + c₂ cos(2^k πt)`; the best least-squares fit wins.
    pub bsimp_k: Vec<u32>,
    /// Number of leading terms of `1, sin, cos` kept in the surrogate.
    pub bsimp_terms: usize,
    pub bic: BicForm,
    pub risk_scale: RiskScale,
    pub prediction_target: PredictionTarget,
    pub slope_variance: SlopeVarianceBasis,
    pub truncation: TruncationOptions,
}

impl Default for TuningOptions {
    fn default() -> Self {
        TuningOptions {
            m_min: *DEFAULT_M_RANGE.start(),
            m_max: *DEFAULT_M_RANGE.end(),
            lambda_grid: LambdaGrid::default(),
            bsimp_k: vec![1],
            bsimp_terms: 2,
            bic: BicForm::default(),
            risk_scale: RiskScale::default(),
            prediction_target: PredictionTarget::default(),
            slope_variance: SlopeVarianceBasis::default(),
            truncation: TruncationOptions::default(),
        }
    }
}

impl TuningOptions {
    pub fn m_range(&self) -> RangeInclusive<usize> {
        self.m_min..=self.m_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_min == 0 || self.m_min > self.m_max {
            return Err(Error::Config(format!("bad component range {}..{}", self.m_min, self.m_max)));
        }
        if self.bsimp_k.is_empty() || self.bsimp_k.iter().any(|k| !(1..=3).contains(k)) {
            return Err(Error::Config(format!("surrogate frequencies must be 1, 2 or 3, got {:?}", self.bsimp_k)));
        }
        if !(1..=3).contains(&self.bsimp_terms) {
            return Err(Error::Config(format!("surrogate needs 1 to 3 terms, got {}", self.bsimp_terms)));
        }
        if !(self.truncation.penalty_exponent > 0.0) {
            return Err(Error::Config("penalty exponent must be positive".into()));
        }
        Ok(())
    }
}

/// `b̃_simp(t) = {c₀ + c₁ sin(2^k πt) + c₂ cos(2^k πt)} I(t < θ̄)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleModel {
    pub k: u32,
    pub coefficients: [f64; 3],
    pub theta_bar: f64,
    pub curve: Vec<f64>,
    pub rss: f64,
}

impl SimpleModel {
    pub fn evaluate(k: u32, coefficients: [f64; 3], theta_bar: f64, grid: &Grid) -> Vec<f64> {
        let freq = 2f64.powi(k as i32) * PI;
        grid.points()
            .iter()
            .map(|&t| {
                if t < theta_bar - 1e-12 {
                    coefficients[0] + coefficients[1] * (freq * t).sin() + coefficients[2] * (freq * t).cos()
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Fits `(c₀, c₁, c₂, θ̄)` by least squares, profiling `θ̄` over the grid.
/// An intercept is included in every regression.
pub fn fit_bsimp(curves: &CurveSet, y: &[f64], k: u32, theta_grid: &ThetaGrid) -> Result<SimpleModel> {
    fit_bsimp_terms(curves, y, k, 3, theta_grid)
}

/// As [`fit_bsimp`] but keeping only the first `terms` of
/// `1, sin(2^k πt), cos(2^k πt)`.
pub fn fit_bsimp_terms(
    curves: &CurveSet,
    y: &[f64],
    k: u32,
    terms: usize,
    theta_grid: &ThetaGrid,
) -> Result<SimpleModel> {
    if !(1..=3).contains(&terms) {
        return Err(Error::Config(format!("surrogate needs 1 to 3 terms, got {terms}")));
    }
    let n = curves.n();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, found: n });
    }
    if y.len() != n {
        return Err(Error::Dimension {
            what: "responses",
            expected: n,
            found: y.len(),
        });
    }
    let grid = curves.grid();
    let y_bar = mean(y);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_bar));

    let mut best: Option<([f64; 3], f64, f64)> = None;
    for &theta in theta_grid.candidates() {
        let basis: Vec<Vec<f64>> = (0..terms)
            .map(|l| {
                let mut c = [0.0; 3];
                c[l] = 1.0;
                SimpleModel::evaluate(k, c, theta, grid)
            })
            .collect();
        let mut design = DMatrix::zeros(n, terms);
        for (l, g) in basis.iter().enumerate() {
            let col = curves.integrals_with(g, grid.weights());
            let cm = mean(&col);
            for (i, v) in col.iter().enumerate() {
                design[(i, l)] = v - cm;
            }
        }
        let Some(coef) = least_squares(&design, &yc) else {
            continue;
        };
        let resid = &yc - &design * &coef;
        let rss = resid.norm_squared();
        if best.is_none_or(|(_, _, b)| rss < b) {
            let mut c = [0.0; 3];
            c[..terms].copy_from_slice(coef.as_slice());
            best = Some((c, theta, rss));
        }
    }
    let (coefficients, theta_bar, rss) =
        best.ok_or_else(|| Error::NoFeasibleCandidate("surrogate design singular at every theta".into()))?;
    Ok(SimpleModel {
        k,
        coefficients,
        theta_bar,
        curve: SimpleModel::evaluate(k, coefficients, theta_bar, grid),
        rss,
    })
}

/// [`fit_bsimp`] for each `k`, keeping the smallest residual sum of squares
/// (earliest `k` on ties).
pub fn fit_bsimp_best(
    curves: &CurveSet,
    y: &[f64],
    ks: &[u32],
    terms: usize,
    theta_grid: &ThetaGrid,
) -> Result<SimpleModel> {
    let mut best: Option<SimpleModel> = None;
    let mut last_err = None;
    for &k in ks {
        match fit_bsimp_terms(curves, y, k, terms, theta_grid) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.rss < b.rss) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Config("no surrogate frequencies".into())))
}

/// Minimum-norm least squares via SVD; `None` when rank deficient.
fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < SINGULAR_TOL * smax {
        return None;
    }
    svd.solve(rhs, 0.0).ok()
}

/// Fixed inputs shared by every surrogate risk evaluation.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub bsimp: SimpleModel,
    pub a_check: f64,
    pub sigma2_hat: f64,
    /// Noiseless `Ȳ*_i = ǎ + ∫ b̃_simp X_i`.
    pub y_star: Vec<f64>,
    /// Responses the prediction error is measured against.
    pub target: Vec<f64>,
}

impl Surrogate {
    pub fn new(
        curves: &CurveSet,
        y: &[f64],
        bsimp: SimpleModel,
        a_check: f64,
        sigma2_hat: f64,
        target: PredictionTarget,
    ) -> Result<Self> {
        let y_star = curves
            .iter()
            .map(|x| Ok(a_check + inner_product(&bsimp.curve, x, curves.grid())?))
            .collect::<Result<Vec<f64>>>()?;
        let target = match target {
            PredictionTarget::Surrogate => y_star.clone(),
            PredictionTarget::Observed => y.to_vec(),
        };
        Ok(Surrogate {
            bsimp,
            a_check,
            sigma2_hat,
            y_star,
            target,
        })
    }
}

fn scale_factors(scale: RiskScale, n: usize) -> (f64, f64) {
    // (divisor applied to S_Y, divisor applied to coefficient variances)
    match scale {
        RiskScale::AsPrinted => (1.0, 1.0),
        RiskScale::PerObservation => (n as f64, n as f64),
    }
}

/// `(S_Y^A(θ), S_b^A(θ), m used)` from a projection on `[0, θ]`.
fn risks_a(proj: &Projection, sur: &Surrogate, m: usize, scale: RiskScale) -> Result<(f64, f64)> {
    let n = sur.y_star.len();
    let fit = fit_projection(proj, &sur.y_star, m)?;
    let bias_y: f64 = sur.target.iter().zip(&fit.fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let (sy_div, var_div) = scale_factors(scale, n);
    let s_y = (bias_y + sur.sigma2_hat * (m as f64 + 1.0)) / sy_div;
    let grid = proj.eigen.grid();
    let diff: Vec<f64> = sur.bsimp.curve.iter().zip(&fit.slope).map(|(a, b)| a - b).collect();
    let bias_b = weighted_dot(&diff, &diff, grid.weights());
    let inv_tau: f64 = proj.eigen.eigenvalues()[..m].iter().map(|t| 1.0 / t).sum();
    let s_b = bias_b + sur.sigma2_hat / var_div * inv_tau;
    Ok((s_y, s_b))
}

/// Method A risks `(S_Y^A(θ), S_b^A(θ))` with exactly `m` components on
/// `[0, θ]`, on the [`RiskScale::AsPrinted`] scale.
pub fn surrogate_risks_a(
    curves: &CurveSet,
    bsimp: &SimpleModel,
    a_check: f64,
    sigma2_hat: f64,
    m: usize,
    theta: f64,
) -> Result<(f64, f64)> {
    let proj = Projection::new(curves, theta, m)?;
    if proj.eigen.m() < m {
        return Err(Error::TooManyComponents {
            requested: m,
            max_feasible: proj.eigen.m(),
        });
    }
    let sur = Surrogate::new(curves, &[], bsimp.clone(), a_check, sigma2_hat, PredictionTarget::Surrogate)?;
    risks_a(&proj, &sur, m, RiskScale::AsPrinted)
}

/// State for Method B risks: the untruncated fit to the noiseless surrogate
/// responses on the full-domain basis.
struct RiskBContext {
    a_star: f64,
    b_star: Vec<f64>,
    full: Projection,
    m: usize,
}

impl RiskBContext {
    fn new(full: Projection, sur: &Surrogate, m: usize) -> Result<Self> {
        let fit = fit_projection(&full, &sur.y_star, m)?;
        Ok(RiskBContext {
            a_star: fit.intercept,
            b_star: fit.slope,
            full,
            m,
        })
    }

    fn risks(
        &self,
        curves: &CurveSet,
        sur: &Surrogate,
        theta: f64,
        tau_theta: &[f64],
        scale: RiskScale,
        basis: SlopeVarianceBasis,
    ) -> Result<(f64, f64)> {
        let n = curves.n();
        let grid = curves.grid();
        let w = grid.restricted_weights(theta)?;
        let last = w.len() - 1;
        let (sy_div, var_div) = scale_factors(scale, n);

        let bias_y: f64 = curves
            .iter()
            .zip(&sur.target)
            .map(|(x, t)| (t - self.a_star - weighted_dot(&self.b_star, x, &w)).powi(2))
            .sum();

        let es = &self.full.eigen;
        let xbar = es.mean_curve();
        let mut var_y = 0.0;
        let mut var_b = 0.0;
        for j in 0..self.m {
            let phi = &es.eigenfunctions()[j];
            let tau_full = es.eigenvalues()[j];
            let partial: f64 = curves
                .iter()
                .map(|x| {
                    let s: f64 = w
                        .iter()
                        .enumerate()
                        .map(|(k, wk)| wk * (x[k] - xbar[k]) * phi[k])
                        .sum();
                    s * s
                })
                .sum();
            var_y += partial / tau_full;
            let tau = match basis {
                SlopeVarianceBasis::Truncated => match tau_theta.get(j) {
                    Some(&t) => t,
                    None => continue,
                },
                SlopeVarianceBasis::FullDomain => tau_full,
            };
            var_b += weighted_dot(phi, phi, &w) / tau;
        }
        let s_y = (bias_y + sur.sigma2_hat / var_div * var_y) / sy_div;

        let diff: Vec<f64> = sur
            .bsimp
            .curve
            .iter()
            .zip(&self.b_star)
            .enumerate()
            .map(|(k, (bs, b))| bs - if k <= last { *b } else { 0.0 })
            .collect();
        let bias_b = weighted_dot(&diff, &diff, grid.weights());
        let s_b = bias_b + sur.sigma2_hat / var_div * var_b;
        Ok((s_y, s_b))
    }
}

/// Method B risks `(S_Y^B(θ), S_b^B(θ))` using the first `m` full-domain
/// components, on the [`RiskScale::AsPrinted`] scale.
pub fn surrogate_risks_b(
    curves: &CurveSet,
    bsimp: &SimpleModel,
    a_check: f64,
    sigma2_hat: f64,
    m: usize,
    theta: f64,
) -> Result<(f64, f64)> {
    let full = Projection::new(curves, 1.0, m)?;
    if full.eigen.m() < m {
        return Err(Error::TooManyComponents {
            requested: m,
            max_feasible: full.eigen.m(),
        });
    }
    let truncated = crate::fpca::eigensystem_up_to(curves, theta, m)?;
    let usable = truncated.usable_components(EIGEN_FLOOR);
    let sur = Surrogate::new(curves, &[], bsimp.clone(), a_check, sigma2_hat, PredictionTarget::Surrogate)?;
    let ctx = RiskBContext::new(full, &sur, m)?;
    ctx.risks(
        curves,
        &sur,
        theta,
        &truncated.eigenvalues()[..usable],
        RiskScale::AsPrinted,
        SlopeVarianceBasis::Truncated,
    )
}

/// Risk surrogates over the `θ` grid. Infeasible candidates are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub thetas: Vec<f64>,
    pub s_y: Vec<f64>,
    pub s_b: Vec<f64>,
    pub m_used: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaLambda {
    pub theta: f64,
    pub index: usize,
    /// Estimated `S_Y''(θ_λ)` after clamping.
    pub curvature: f64,
    pub variance: f64,
    /// The raw curvature fell below [`CURVATURE_FLOOR`].
    pub degenerate: bool,
}

/// `θ_λ` (argmin for Method A, first local minimum for Method B) of
/// `S_Y(θ) + λθ^p` and `V(λ) = (σ̂²/n) S_Y'' / (S_Y'' + λ)²`.
pub fn theta_lambda_and_variance(
    thetas: &[f64],
    s_y: &[f64],
    lambda: f64,
    method: Method,
    sigma2_hat: f64,
    n: usize,
    penalty_exponent: f64,
) -> Result<ThetaLambda> {
    if thetas.len() != s_y.len() {
        return Err(Error::Dimension {
            what: "risk curve",
            expected: thetas.len(),
            found: s_y.len(),
        });
    }
    if thetas.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            found: thetas.len(),
        });
    }
    let penalised: Vec<f64> = thetas
        .iter()
        .zip(s_y)
        .map(|(t, s)| s + lambda * t.powf(penalty_exponent))
        .collect();
    let index = match method {
        Method::A => argmin_first(&penalised.iter().map(|v| Some(*v)).collect::<Vec<_>>()),
        Method::B => first_local_min(&penalised),
    }
    .expect("non-empty risk curve");

    let raw = second_difference(thetas, s_y, index);
    let degenerate = !(raw >= CURVATURE_FLOOR);
    let curvature = if degenerate { CURVATURE_FLOOR } else { raw };
    let variance = sigma2_hat / n as f64 * curvature / (curvature + lambda).powi(2);
    Ok(ThetaLambda {
        theta: thetas[index],
        index,
        curvature,
        variance,
        degenerate,
    })
}

/// Second derivative of the parabola through the three grid points nearest
/// `idx` (one-sided at the ends).
fn second_difference(x: &[f64], f: &[f64], idx: usize) -> f64 {
    let last = x.len() - 1;
    let mid = idx.clamp(1, last - 1);
    let (x0, x1, x2) = (x[mid - 1], x[mid], x[mid + 1]);
    let (f0, f1, f2) = (f[mid - 1], f[mid], f[mid + 1]);
    let d01 = (f1 - f0) / (x1 - x0);
    let d12 = (f2 - f1) / (x2 - x1);
    2.0 * (d12 - d01) / (x2 - x0)
}

/// `∫ S_b(θ) N(θ; θ_λ, V) dθ` over the `θ` grid, renormalised by the normal
/// mass captured by the grid.
pub fn p_b(thetas: &[f64], s_b: &[f64], theta_lambda: f64, variance: f64) -> f64 {
    debug_assert_eq!(thetas.len(), s_b.len());
    let point_mass = || {
        let mut best = 0;
        for (k, t) in thetas.iter().enumerate() {
            if (t - theta_lambda).abs() < (thetas[best] - theta_lambda).abs() {
                best = k;
            }
        }
        s_b[best]
    };
    if thetas.len() == 1 || !(variance > 0.0) {
        return point_mass();
    }
    let q = trapezoid_weights(thetas);
    let log_dens: Vec<f64> = thetas
        .iter()
        .map(|t| -(t - theta_lambda).powi(2) / (2.0 * variance))
        .collect();
    let top = log_dens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((qk, ld), s) in q.iter().zip(&log_dens).zip(s_b) {
        let w = qk * (ld - top).exp();
        num += w * s;
        den += w;
    }
    if !(den > 0.0) {
        return point_mass();
    }
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub theta_lambda: f64,
    pub v_lambda: f64,
    pub p_b: f64,
    pub degenerate: bool,
}

/// One pass of the `λ` search for a fixed number of components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub m: usize,
    pub lambda_star: f64,
    pub records: Vec<LambdaRecord>,
    pub risk_curve: RiskCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MRecord {
    pub m: usize,
    pub lambda_star: f64,
    pub theta_hat: f64,
    pub rss: f64,
    pub bic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub method: Method,
    pub lambda_grid: Vec<f64>,
    pub records: Vec<LambdaRecord>,
    pub lambda_star: f64,
    pub m_star: usize,
    /// Method A: one row per `m` of the outer loop.
    pub m_table: Vec<MRecord>,
    pub pilot_m: usize,
    pub pilot_bic: Vec<BicRow>,
    pub sigma2_hat: f64,
    pub bsimp: SimpleModel,
    pub risk_curve: RiskCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedFit {
    pub fit: TruncatedFit,
    pub report: TuningReport,
}

/// Everything that depends only on the data: per-`θ` principal components,
/// the BIC-selected pilot and the fitted surrogate.
pub struct Tuner<'a> {
    curves: &'a CurveSet,
    y: &'a [f64],
    thetas: ThetaGrid,
    opts: TuningOptions,
    cache: ProjectionCache,
    full: Projection,
    pilot: PilotFit,
    pilot_bic: Vec<BicRow>,
    surrogate: Surrogate,
    lambda_grid: Vec<f64>,
}

impl<'a> Tuner<'a> {
    pub fn new(curves: &'a CurveSet, y: &'a [f64], thetas: &ThetaGrid, opts: &TuningOptions) -> Result<Self> {
        let cache = ProjectionCache::build(curves, thetas, opts.m_max);
        Self::with_cache(curves, y, cache, opts)
    }

    /// Reuses per-`θ` projections of the same curves (e.g. across bootstrap
    /// replicates, where only the responses change).
    pub fn with_cache(curves: &'a CurveSet, y: &'a [f64], cache: ProjectionCache, opts: &TuningOptions) -> Result<Self> {
        opts.validate()?;
        if y.len() != curves.n() {
            return Err(Error::Dimension {
                what: "responses",
                expected: curves.n(),
                found: y.len(),
            });
        }
        let full = Projection::new(curves, 1.0, opts.m_max)?;
        let selection = bic_select_projection(&full, y, opts.m_range(), opts.bic)?;
        let pilot_bic = selection.table.clone();
        let pilot = selection.into_chosen();
        let thetas = cache.thetas().clone();
        let bsimp = fit_bsimp_best(curves, y, &opts.bsimp_k, opts.bsimp_terms, &thetas)?;
        let surrogate = Surrogate::new(curves, y, bsimp, pilot.intercept, pilot.sigma2_hat, opts.prediction_target)?;
        let lambda_grid = opts.lambda_grid.resolve(y)?;
        Ok(Tuner {
            curves,
            y,
            thetas,
            opts: opts.clone(),
            cache,
            full,
            pilot,
            pilot_bic,
            surrogate,
            lambda_grid,
        })
    }

    pub fn pilot(&self) -> &PilotFit {
        &self.pilot
    }

    pub fn surrogate(&self) -> &Surrogate {
        &self.surrogate
    }

    pub fn cache(&self) -> &ProjectionCache {
        &self.cache
    }

    pub fn lambda_grid(&self) -> &[f64] {
        &self.lambda_grid
    }

    pub fn options(&self) -> &TuningOptions {
        &self.opts
    }

    pub fn risk_curve(&self, method: Method, m: usize) -> Result<RiskCurve> {
        match method {
            Method::A => self.risk_curve_a(m),
            Method::B => self.risk_curve_b(m),
        }
    }

    fn risk_curve_a(&self, m: usize) -> Result<RiskCurve> {
        let mut curve = empty_curve();
        for (idx, &theta) in self.thetas.candidates().iter().enumerate() {
            let m_eff = self.cache.feasible_m(idx, m);
            let Some(proj) = self.cache.get(idx).filter(|_| m_eff > 0) else {
                continue;
            };
            let (s_y, s_b) = risks_a(proj, &self.surrogate, m_eff, self.opts.risk_scale)?;
            push(&mut curve, theta, s_y, s_b, m_eff);
        }
        Ok(curve)
    }

    fn risk_curve_b(&self, m: usize) -> Result<RiskCurve> {
        let ctx = RiskBContext::new(self.full.clone(), &self.surrogate, m)?;
        let mut curve = empty_curve();
        for (idx, &theta) in self.thetas.candidates().iter().enumerate() {
            let usable = self.cache.feasible_m(idx, m);
            let tau: &[f64] = match self.cache.get(idx) {
                Some(p) => &p.eigen.eigenvalues()[..usable],
                None => &[],
            };
            let (s_y, s_b) = ctx.risks(
                self.curves,
                &self.surrogate,
                theta,
                tau,
                self.opts.risk_scale,
                self.opts.slope_variance,
            )?;
            push(&mut curve, theta, s_y, s_b, m);
        }
        Ok(curve)
    }

    /// Scans the `λ` grid for a fixed `m`; `λ*` minimises `P_b` (smallest on ties).
    pub fn select_lambda(&self, method: Method, m: usize) -> Result<LambdaSelection> {
        let curve = self.risk_curve(method, m)?;
        let n = self.curves.n();
        let mut records = Vec::with_capacity(self.lambda_grid.len());
        for &lambda in &self.lambda_grid {
            let tl = theta_lambda_and_variance(
                &curve.thetas,
                &curve.s_y,
                lambda,
                method,
                self.surrogate.sigma2_hat,
                n,
                self.opts.truncation.penalty_exponent,
            )?;
            records.push(LambdaRecord {
                lambda,
                theta_lambda: tl.theta,
                v_lambda: tl.variance,
                p_b: p_b(&curve.thetas, &curve.s_b, tl.theta, tl.variance),
                degenerate: tl.degenerate,
            });
        }
        let best = argmin_first(&records.iter().map(|r| Some(r.p_b)).collect::<Vec<_>>())
            .ok_or_else(|| Error::NoFeasibleCandidate("empty lambda grid".into()))?;
        Ok(LambdaSelection {
            m,
            lambda_star: records[best].lambda,
            records,
            risk_curve: curve,
        })
    }

    pub fn fit(&self, method: Method) -> Result<TunedFit> {
        match method {
            Method::A => self.fit_a(),
            Method::B => self.fit_b(),
        }
    }

    /// Method A: select `λ` for every `m`, fit, then pick `m` by BIC.
    pub fn fit_a(&self) -> Result<TunedFit> {
        let n = self.y.len();
        let mut rounds = Vec::new();
        for m in self.opts.m_range() {
            let Ok(sel) = self.select_lambda(Method::A, m) else {
                continue;
            };
            let Ok(fit) = fit_method_a_cached(&self.cache, self.y, m, sel.lambda_star, &self.opts.truncation) else {
                continue;
            };
            let rss = fit.rss(self.curves, self.y)?;
            let score = bic(rss, n, m, self.opts.bic);
            rounds.push((
                MRecord {
                    m,
                    lambda_star: sel.lambda_star,
                    theta_hat: fit.theta_hat,
                    rss,
                    bic: score,
                },
                sel,
                fit,
            ));
        }
        let best = argmin_first(&rounds.iter().map(|(r, _, _)| Some(r.bic)).collect::<Vec<_>>())
            .ok_or_else(|| Error::NoFeasibleCandidate("Method A: no feasible number of components".into()))?;
        let m_table = rounds.iter().map(|(r, _, _)| r.clone()).collect();
        let (record, sel, fit) = rounds.swap_remove(best);
        Ok(TunedFit {
            fit,
            report: TuningReport {
                method: Method::A,
                lambda_grid: self.lambda_grid.clone(),
                records: sel.records,
                lambda_star: sel.lambda_star,
                m_star: record.m,
                m_table,
                pilot_m: self.pilot.m,
                pilot_bic: self.pilot_bic.clone(),
                sigma2_hat: self.surrogate.sigma2_hat,
                bsimp: self.surrogate.bsimp.clone(),
                risk_curve: sel.risk_curve,
            },
        })
    }

    /// Fit at a given `λ` without the surrogate search. Method A still picks
    /// `m` by BIC over the configured range.
    pub fn fit_at_lambda(&self, method: Method, lambda: f64) -> Result<TruncatedFit> {
        match method {
            Method::A => fit_method_a_bic(&self.cache, self.curves, self.y, lambda, &self.opts),
            Method::B => fit_method_b_with(
                &self.pilot,
                self.curves,
                self.y,
                lambda,
                &self.thetas,
                &self.opts.truncation,
            ),
        }
    }

    /// Method B: `m` comes from the pilot's BIC choice.
    pub fn fit_b(&self) -> Result<TunedFit> {
        let sel = self.select_lambda(Method::B, self.pilot.m)?;
        let fit = fit_method_b_with(
            &self.pilot,
            self.curves,
            self.y,
            sel.lambda_star,
            &self.thetas,
            &self.opts.truncation,
        )?;
        Ok(TunedFit {
            fit,
            report: TuningReport {
                method: Method::B,
                lambda_grid: self.lambda_grid.clone(),
                records: sel.records,
                lambda_star: sel.lambda_star,
                m_star: self.pilot.m,
                m_table: Vec::new(),
                pilot_m: self.pilot.m,
                pilot_bic: self.pilot_bic.clone(),
                sigma2_hat: self.surrogate.sigma2_hat,
                bsimp: self.surrogate.bsimp.clone(),
                risk_curve: sel.risk_curve,
            },
        })
    }
}

/// Method A at a fixed `λ` for every `m` in the configured range, keeping
/// the fit with the smallest BIC (smaller `m` on ties).
pub fn fit_method_a_bic(
    cache: &ProjectionCache,
    curves: &CurveSet,
    y: &[f64],
    lambda: f64,
    opts: &TuningOptions,
) -> Result<TruncatedFit> {
    let mut best: Option<(f64, TruncatedFit)> = None;
    for m in opts.m_range() {
        let Ok(fit) = fit_method_a_cached(cache, y, m, lambda, &opts.truncation) else {
            continue;
        };
        let score = bic(fit.rss(curves, y)?, y.len(), m, opts.bic);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, fit));
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::NoFeasibleCandidate("Method A: no feasible number of components".into()))
}

fn empty_curve() -> RiskCurve {
    RiskCurve {
        thetas: Vec::new(),
        s_y: Vec::new(),
        s_b: Vec::new(),
        m_used: Vec::new(),
    }
}

fn push(curve: &mut RiskCurve, theta: f64, s_y: f64, s_b: f64, m: usize) {
    curve.thetas.push(theta);
    curve.s_y.push(s_y);
    curve.s_b.push(s_b);
    curve.m_used.push(m);
}

/// Single-`m` entry point: runs the full `λ` search and reports it.
pub fn select_lambda(
    curves: &CurveSet,
    y: &[f64],
    method: Method,
    m: usize,
    lambda_grid: &LambdaGrid,
    theta_grid: &ThetaGrid,
) -> Result<TuningReport> {
    let opts = TuningOptions {
        lambda_grid: lambda_grid.clone(),
        m_max: m.max(DEFAULT_M_RANGE.end().to_owned()),
        ..Default::default()
    };
    let tuner = Tuner::new(curves, y, theta_grid, &opts)?;
    let sel = tuner.select_lambda(method, m)?;
    Ok(TuningReport {
        method,
        lambda_grid: tuner.lambda_grid.clone(),
        records: sel.records,
        lambda_star: sel.lambda_star,
        m_star: m,
        m_table: Vec::new(),
        pilot_m: tuner.pilot.m,
        pilot_bic: tuner.pilot_bic.clone(),
        sigma2_hat: tuner.surrogate.sigma2_hat,
        bsimp: tuner.surrogate.bsimp.clone(),
        risk_curve: sel.risk_curve,
    })
}

/// Full pipeline: pilot, surrogate, `λ` (and for Method A `m`) selection,
/// final truncated fit.
pub fn tune_and_fit(
    curves: &CurveSet,
    y: &[f64],
    method: Method,
    theta_grid: &ThetaGrid,
    opts: &TuningOptions,
) -> Result<TunedFit> {
    Tuner::new(curves, y, theta_grid, opts)?.fit(method)
}
