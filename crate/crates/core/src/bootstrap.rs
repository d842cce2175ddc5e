//! Residual bootstrap for pointwise standard deviations of `b̂`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flm::bic_select_projection;
use crate::fpca::{CurveSet, Projection};
use crate::numerics::{mean, Grid};
use crate::simstudy::csv_err;
use crate::truncated::{fit_method_b_with, truncate_and_correct, Method, ProjectionCache, ThetaGrid, TruncatedFit};
use crate::tuning::{fit_method_a_bic, Tuner, TuningOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Keep `θ̂` of the original fit instead of re-searching it.
    pub freeze_theta: bool,
    /// Re-run the full `λ` selection on every replicate.
    pub reselect_lambda: bool,
    /// Fresh resamples allowed per replicate after a failed fit.
    pub retry_cap: usize,
    pub keep_replicates: bool,
    pub tuning: TuningOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 200,
            seed: 1,
            freeze_theta: false,
            reselect_lambda: false,
            retry_cap: 10,
            keep_replicates: false,
            tuning: TuningOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub grid: Grid,
    pub b_hat: Vec<f64>,
    pub pointwise_sd: Vec<f64>,
    pub replicates: usize,
    /// Failed fits that were replaced by a fresh resample.
    pub retries: usize,
    pub theta_hats: Vec<f64>,
    pub m_hats: Vec<usize>,
    pub replicate_curves: Option<Vec<Vec<f64>>>,
}

impl BootstrapBands {
    /// `b̂ − 2 sd`.
    pub fn lower(&self) -> Vec<f64> {
        self.b_hat.iter().zip(&self.pointwise_sd).map(|(b, s)| b - 2.0 * s).collect()
    }

    /// `b̂ + 2 sd`.
    pub fn upper(&self) -> Vec<f64> {
        self.b_hat.iter().zip(&self.pointwise_sd).map(|(b, s)| b + 2.0 * s).collect()
    }

    /// Columns `t, b_hat, lower, upper`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "b_hat", "lower", "upper"]).map_err(csv_err)?;
        let (lo, hi) = (self.lower(), self.upper());
        for k in 0..self.b_hat.len() {
            w.write_record([
                self.grid.points()[k].to_string(),
                self.b_hat[k].to_string(),
                lo[k].to_string(),
                hi[k].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed ingredients of a residual bootstrap around one fit.
pub struct Bootstrap<'a> {
    curves: &'a CurveSet,
    fit: &'a TruncatedFit,
    fitted: Vec<f64>,
    residuals: Vec<f64>,
    thetas: ThetaGrid,
    cache: ProjectionCache,
    full: Projection,
    opts: BootstrapOptions,
}

impl<'a> Bootstrap<'a> {
    pub fn new(
        curves: &'a CurveSet,
        y: &[f64],
        fit: &'a TruncatedFit,
        thetas: &ThetaGrid,
        opts: &BootstrapOptions,
    ) -> Result<Self> {
        if opts.replicates < 2 {
            return Err(Error::Config(format!("bootstrap needs at least 2 replicates, got {}", opts.replicates)));
        }
        opts.tuning.validate()?;
        if y.len() != curves.n() {
            return Err(Error::Dimension {
                what: "responses",
                expected: curves.n(),
                found: y.len(),
            });
        }
        let fitted = fit.fitted(curves)?;
        let raw: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let centre = mean(&raw);
        let residuals = raw.iter().map(|r| r - centre).collect();
        let thetas = if opts.freeze_theta && !opts.reselect_lambda {
            ThetaGrid::new(vec![fit.theta_hat], curves.grid())?
        } else {
            thetas.clone()
        };
        let cache = ProjectionCache::build(curves, &thetas, opts.tuning.m_max);
        let full = Projection::new(curves, 1.0, opts.tuning.m_max)?;
        Ok(Bootstrap {
            curves,
            fit,
            fitted,
            residuals,
            thetas,
            cache,
            full,
            opts: opts.clone(),
        })
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Responses `ŷ_i + r*_{idx_i}`.
    pub fn resampled_responses(&self, indices: &[usize]) -> Result<Vec<f64>> {
        if indices.len() != self.fitted.len() {
            return Err(Error::Dimension {
                what: "resample indices",
                expected: self.fitted.len(),
                found: indices.len(),
            });
        }
        indices
            .iter()
            .zip(&self.fitted)
            .map(|(&j, f)| {
                self.residuals
                    .get(j)
                    .map(|r| f + r)
                    .ok_or_else(|| Error::Domain(format!("resample index {j} out of range")))
            })
            .collect()
    }

    /// Refit on the responses built from `indices`.
    pub fn replicate(&self, indices: &[usize]) -> Result<TruncatedFit> {
        let y = self.resampled_responses(indices)?;
        let method = self.fit.method;
        if self.opts.reselect_lambda {
            let tuner = Tuner::with_cache(self.curves, &y, self.cache.clone(), &self.opts.tuning)?;
            return Ok(tuner.fit(method)?.fit);
        }
        let lambda = self.fit.lambda;
        match method {
            Method::A => fit_method_a_bic(&self.cache, self.curves, &y, lambda, &self.opts.tuning),
            Method::B => {
                let pilot =
                    bic_select_projection(&self.full, &y, self.opts.tuning.m_range(), self.opts.tuning.bic)?
                        .into_chosen();
                if self.opts.freeze_theta {
                    let (a_hat, b_hat) = truncate_and_correct(&pilot, self.fit.theta_hat)?;
                    return Ok(TruncatedFit {
                        method,
                        grid: self.curves.grid().clone(),
                        a_hat,
                        b_hat,
                        theta_hat: self.fit.theta_hat,
                        m: pilot.m,
                        lambda,
                        objective_trace: Vec::new(),
                    });
                }
                fit_method_b_with(&pilot, self.curves, &y, lambda, &self.thetas, &self.opts.tuning.truncation)
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.residuals.len();
        (0..n).map(|_| rng.random_range(0..n)).collect()
    }

    /// Replicate `r` with its own random stream, resampling again on failure.
    fn run_one(&self, r: usize) -> Result<(TruncatedFit, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(r as u64);
        let mut last = String::new();
        for attempt in 0..=self.opts.retry_cap {
            match self.replicate(&self.draw(&mut rng)) {
                Ok(fit) => return Ok((fit, attempt)),
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Bootstrap {
            attempts: self.opts.retry_cap + 1,
            last,
        })
    }

    pub fn run(&self) -> Result<BootstrapBands> {
        let results = (0..self.opts.replicates)
            .into_par_iter()
            .map(|r| self.run_one(r))
            .collect::<Result<Vec<_>>>()?;
        let retries = results.iter().map(|(_, a)| a).sum();
        let fits: Vec<TruncatedFit> = results.into_iter().map(|(f, _)| f).collect();
        Ok(self.bands(fits, retries))
    }

    /// Bands from explicitly given resamples, one index vector per replicate.
    pub fn run_with_indices(&self, resamples: &[Vec<usize>]) -> Result<BootstrapBands> {
        if resamples.len() < 2 {
            return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
        }
        let fits = resamples
            .iter()
            .map(|idx| self.replicate(idx))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.bands(fits, 0))
    }

    fn bands(&self, fits: Vec<TruncatedFit>, retries: usize) -> BootstrapBands {
        let g = self.fit.b_hat.len();
        let b = fits.len() as f64;
        let mut sd = vec![0.0; g];
        for (k, s) in sd.iter_mut().enumerate() {
            let m = fits.iter().map(|f| f.b_hat[k]).sum::<f64>() / b;
            *s = (fits.iter().map(|f| (f.b_hat[k] - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
        }
        BootstrapBands {
            grid: self.curves.grid().clone(),
            b_hat: self.fit.b_hat.clone(),
            pointwise_sd: sd,
            replicates: fits.len(),
            retries,
            theta_hats: fits.iter().map(|f| f.theta_hat).collect(),
            m_hats: fits.iter().map(|f| f.m).collect(),
            replicate_curves: self
                .opts
                .keep_replicates
                .then(|| fits.into_iter().map(|f| f.b_hat).collect()),
        }
    }
}

/// Pointwise bootstrap standard deviations of `b̂` from resampled centered
/// residuals around `fit`.
pub fn residual_bootstrap(
    curves: &CurveSet,
    y: &[f64],
    fit: &TruncatedFit,
    thetas: &ThetaGrid,
    opts: &BootstrapOptions,
) -> Result<BootstrapBands> {
    Bootstrap::new(curves, y, fit, thetas, opts)?.run()
}
