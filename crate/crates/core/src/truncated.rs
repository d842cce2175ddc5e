//! Estimators of the truncation point.
//!
//! Method A minimises `S₁(a, β, θ | m) + nλθ²` jointly, re-running the
//! principal components analysis on `[0, θ]` for every candidate `θ`.
//! Method B keeps an untruncated pilot `(ǎ, b̌)` and minimises
//! `T(θ) = Σ{Y_i − ǎ − ∫_0^θ b̌ X_i}² + nλθ²`, then truncates `b̌` at the
//! selected `θ̂` and corrects the intercept for location.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flm::{fit_pc_regression, fit_projection, PcFit, PilotFit, EIGEN_FLOOR};
use crate::fpca::{CurveSet, Projection};
use crate::numerics::{weighted_dot, Grid};

/// Smallest truncation point searched by default.
pub const DEFAULT_THETA_MIN: f64 = 0.05;

const GRID_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    A,
    B,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::A => f.write_str("A"),
            Method::B => f.write_str("B"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Method::A),
            "B" | "b" => Ok(Method::B),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Candidate truncation points; each one is a point of the curve grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    candidates: Vec<f64>,
}

impl ThetaGrid {
    /// Every grid point in `[theta_min, theta_max]`.
    pub fn from_grid(grid: &Grid, theta_min: f64, theta_max: f64) -> Result<Self> {
        if !(theta_min > 0.0 && theta_min <= theta_max && theta_max <= 1.0) {
            return Err(Error::Domain(format!(
                "theta range [{theta_min}, {theta_max}] must satisfy 0 < min <= max <= 1"
            )));
        }
        let candidates: Vec<f64> = grid
            .points()
            .iter()
            .copied()
            .filter(|&t| t >= theta_min - GRID_TOL && t <= theta_max + GRID_TOL && t > 0.0)
            .collect();
        if candidates.is_empty() {
            return Err(Error::Domain(format!(
                "no grid point lies in [{theta_min}, {theta_max}]"
            )));
        }
        Ok(ThetaGrid { candidates })
    }

    /// Grid points in `[DEFAULT_THETA_MIN, 1]`.
    pub fn default_for(grid: &Grid) -> Result<Self> {
        Self::from_grid(grid, DEFAULT_THETA_MIN, 1.0)
    }

    /// Explicit candidates; they must be strictly increasing grid points.
    pub fn new(candidates: Vec<f64>, grid: &Grid) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Domain("empty theta grid".into()));
        }
        if candidates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("theta candidates must increase".into()));
        }
        for &c in &candidates {
            let on_grid = grid.points().iter().any(|p| (p - c).abs() <= GRID_TOL);
            if !on_grid || c <= 0.0 {
                return Err(Error::Domain(format!("theta candidate {c} is not a grid point in (0, 1]")));
            }
        }
        Ok(ThetaGrid { candidates })
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.candidates[0]
    }

    pub fn max(&self) -> f64 {
        self.candidates[self.candidates.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationOptions {
    /// Exponent `p` of the penalty `nλθ^p`.
    pub penalty_exponent: f64,
    /// Method B only: after choosing `θ̂`, refit `(a, b)` on `[0, θ̂]`
    /// instead of truncating the pilot.
    pub refit: bool,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions {
            penalty_exponent: 2.0,
            refit: false,
        }
    }
}

impl TruncationOptions {
    pub fn penalty(&self, n: usize, lambda: f64, theta: f64) -> f64 {
        n as f64 * lambda * theta.powf(self.penalty_exponent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub theta: f64,
    /// `None` when no component is estimable at this `θ`.
    pub objective: Option<f64>,
    /// Components actually used (Method A shrinks `m` near small `θ`).
    pub m_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedFit {
    pub method: Method,
    pub grid: Grid,
    pub a_hat: f64,
    pub b_hat: Vec<f64>,
    pub theta_hat: f64,
    pub m: usize,
    pub lambda: f64,
    pub objective_trace: Vec<TracePoint>,
}

impl TruncatedFit {
    /// `â + ∫_0^θ̂ b̂ x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        crate::flm::predict(self.a_hat, &self.b_hat, x, &self.grid, self.theta_hat)
    }

    pub fn fitted(&self, curves: &CurveSet) -> Result<Vec<f64>> {
        curves.iter().map(|x| self.predict(x)).collect()
    }

    pub fn rss(&self, curves: &CurveSet, y: &[f64]) -> Result<f64> {
        Ok(self
            .fitted(curves)?
            .iter()
            .zip(y)
            .map(|(f, yi)| (yi - f).powi(2))
            .sum())
    }
}

/// Minimised Method A objective at one `θ`.
#[derive(Clone, Debug)]
pub struct ObjectiveA {
    /// `S₁ + nλθ^p` at the minimiser.
    pub s: f64,
    /// Minimised `S₁`.
    pub rss: f64,
    pub a: f64,
    pub beta: Vec<f64>,
}

/// Method A objective at a single `θ` with exactly `m` components.
pub fn objective_a(curves: &CurveSet, y: &[f64], theta: f64, m: usize, lambda: f64) -> Result<ObjectiveA> {
    let fit = fit_pc_regression(curves, y, m, theta)?;
    let opts = TruncationOptions::default();
    Ok(ObjectiveA {
        s: fit.rss + opts.penalty(y.len(), lambda, theta),
        rss: fit.rss,
        a: fit.intercept,
        beta: fit.beta,
    })
}

/// Per-`θ` principal components, computed once per set of curves and reused
/// across responses, `m` and `λ`.
#[derive(Clone, Debug)]
pub struct ProjectionCache {
    thetas: ThetaGrid,
    entries: Vec<Option<Projection>>,
    n: usize,
}

impl ProjectionCache {
    pub fn build(curves: &CurveSet, thetas: &ThetaGrid, m_max: usize) -> Self {
        let entries = thetas
            .candidates()
            .par_iter()
            .map(|&theta| Projection::new(curves, theta, m_max).ok())
            .collect();
        ProjectionCache {
            thetas: thetas.clone(),
            entries,
            n: curves.n(),
        }
    }

    pub fn thetas(&self) -> &ThetaGrid {
        &self.thetas
    }

    pub fn get(&self, idx: usize) -> Option<&Projection> {
        self.entries[idx].as_ref()
    }

    /// Largest usable number of components at candidate `idx`, capped by `m`.
    pub fn feasible_m(&self, idx: usize, m: usize) -> usize {
        match &self.entries[idx] {
            None => 0,
            Some(p) => m
                .min(p.eigen.m())
                .min(p.eigen.usable_components(EIGEN_FLOOR))
                .min(self.n.saturating_sub(2)),
        }
    }

    /// Fit at candidate `idx` with `m` shrunk to what is feasible there.
    pub fn fit(&self, idx: usize, y: &[f64], m: usize) -> Option<PcFit> {
        let m_eff = self.feasible_m(idx, m);
        if m_eff == 0 {
            return None;
        }
        fit_projection(self.get(idx)?, y, m_eff).ok()
    }
}

/// Index of the smallest value, first one on ties. `None` entries are skipped.
pub fn argmin_first(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// First interior point strictly below both neighbours, scanning left to
/// right; falls back to the global argmin.
pub fn first_local_min(values: &[f64]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    for k in 1..values.len().saturating_sub(1) {
        if values[k] < values[k - 1] && values[k] < values[k + 1] {
            return Some(k);
        }
    }
    let opt: Vec<Option<f64>> = values.iter().map(|v| Some(*v)).collect();
    argmin_first(&opt)
}

pub fn fit_method_a(
    curves: &CurveSet,
    y: &[f64],
    m: usize,
    lambda: f64,
    theta_grid: &ThetaGrid,
) -> Result<TruncatedFit> {
    let cache = ProjectionCache::build(curves, theta_grid, m);
    fit_method_a_cached(&cache, y, m, lambda, &TruncationOptions::default())
}

pub fn fit_method_a_cached(
    cache: &ProjectionCache,
    y: &[f64],
    m: usize,
    lambda: f64,
    opts: &TruncationOptions,
) -> Result<TruncatedFit> {
    if y.len() != cache.n {
        return Err(Error::Dimension {
            what: "responses",
            expected: cache.n,
            found: y.len(),
        });
    }
    let n = y.len();
    let thetas = cache.thetas().candidates();
    let fits: Vec<Option<PcFit>> = (0..thetas.len()).map(|k| cache.fit(k, y, m)).collect();
    let objectives: Vec<Option<f64>> = fits
        .iter()
        .zip(thetas)
        .map(|(f, &t)| f.as_ref().map(|f| f.rss + opts.penalty(n, lambda, t)))
        .collect();
    let best = argmin_first(&objectives).ok_or_else(|| {
        Error::NoFeasibleCandidate(format!("Method A with m = {m}: every theta candidate is infeasible"))
    })?;
    let trace = thetas
        .iter()
        .zip(&objectives)
        .zip(&fits)
        .map(|((&theta, &objective), f)| TracePoint {
            theta,
            objective,
            m_used: f.as_ref().map_or(0, |f| f.m),
        })
        .collect();
    let chosen = fits[best].as_ref().expect("argmin is feasible");
    Ok(TruncatedFit {
        method: Method::A,
        grid: chosen.grid().clone(),
        a_hat: chosen.intercept,
        b_hat: chosen.slope.clone(),
        theta_hat: thetas[best],
        m: chosen.m,
        lambda,
        objective_trace: trace,
    })
}

/// `T(θ) = Σ{y_i − ǎ − ∫_0^θ b̌ X_i}² + nλθ^p`.
pub fn objective_b(pilot: &PilotFit, curves: &CurveSet, y: &[f64], theta: f64, lambda: f64) -> Result<f64> {
    objective_b_with(pilot, curves, y, theta, lambda, &TruncationOptions::default())
}

fn objective_b_with(
    pilot: &PilotFit,
    curves: &CurveSet,
    y: &[f64],
    theta: f64,
    lambda: f64,
    opts: &TruncationOptions,
) -> Result<f64> {
    if y.len() != curves.n() {
        return Err(Error::Dimension {
            what: "responses",
            expected: curves.n(),
            found: y.len(),
        });
    }
    let w = curves.grid().restricted_weights(theta)?;
    let rss: f64 = curves
        .iter()
        .zip(y)
        .map(|(x, yi)| (yi - pilot.intercept - weighted_dot(&pilot.slope, x, &w)).powi(2))
        .sum();
    Ok(rss + opts.penalty(y.len(), lambda, theta))
}

pub fn fit_method_b(
    pilot: &PilotFit,
    curves: &CurveSet,
    y: &[f64],
    lambda: f64,
    theta_grid: &ThetaGrid,
) -> Result<TruncatedFit> {
    fit_method_b_with(pilot, curves, y, lambda, theta_grid, &TruncationOptions::default())
}

pub fn fit_method_b_with(
    pilot: &PilotFit,
    curves: &CurveSet,
    y: &[f64],
    lambda: f64,
    theta_grid: &ThetaGrid,
    opts: &TruncationOptions,
) -> Result<TruncatedFit> {
    let objectives = theta_grid
        .candidates()
        .iter()
        .map(|&t| objective_b_with(pilot, curves, y, t, lambda, opts))
        .collect::<Result<Vec<f64>>>()?;
    let best = first_local_min(&objectives).expect("theta grid is non-empty");
    let theta_hat = theta_grid.candidates()[best];
    let trace = theta_grid
        .candidates()
        .iter()
        .zip(&objectives)
        .map(|(&theta, &o)| TracePoint {
            theta,
            objective: Some(o),
            m_used: pilot.m,
        })
        .collect();

    let (a_hat, b_hat, m) = if opts.refit {
        let refit = refit_truncated(curves, y, pilot.m, theta_hat)?;
        (refit.intercept, refit.slope, refit.m)
    } else {
        let (a, b) = truncate_and_correct(pilot, theta_hat)?;
        (a, b, pilot.m)
    };
    Ok(TruncatedFit {
        method: Method::B,
        grid: pilot.grid().clone(),
        a_hat,
        b_hat,
        theta_hat,
        m,
        lambda,
        objective_trace: trace,
    })
}

fn refit_truncated(curves: &CurveSet, y: &[f64], m: usize, theta: f64) -> Result<PcFit> {
    let proj = Projection::new(curves, theta, m)?;
    let m_eff = m
        .min(proj.eigen.usable_components(EIGEN_FLOOR))
        .min(y.len().saturating_sub(2));
    fit_projection(&proj, y, m_eff)
}

/// `b̂ = b̌ I(t <= θ)`, with the intercept shifted so the mean fitted value
/// is unchanged: `â = Ȳ − ∫_0^θ b̂ X̄ = ǎ + ∫_θ^1 b̌ X̄`.
pub fn truncate_and_correct(pilot: &PilotFit, theta: f64) -> Result<(f64, Vec<f64>)> {
    let grid = pilot.grid();
    let last = grid.last_index_within(theta)?;
    let mut b_hat = pilot.slope.clone();
    b_hat[last + 1..].iter_mut().for_each(|v| *v = 0.0);
    let xbar = pilot.eigen.mean_curve();
    let w = grid.restricted_weights(theta)?;
    let kept = weighted_dot(&b_hat, xbar, &w);
    let full = weighted_dot(&pilot.slope, xbar, grid.weights());
    Ok((pilot.intercept + full - kept, b_hat))
}
