//! Principal-components regression for the functional linear model.
//!
//! With `ψ_j = φ̂_j` the normal equations are diagonal and the coefficients
//! are `β̌_k = ω̂_k⁻¹ ∫ R φ̂_k`, where
//! `R(t) = n⁻¹ Σ (Y_i − Ȳ){X_i(t) − X̄(t)}`. The same fitter runs on a
//! truncated domain `[0, θ]` by swapping in the eigensystem of `[0, θ]`.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{eigensystem, scores, CurveSet, EigenSystem, Projection};
use crate::numerics::{mean, restricted_inner_product, Grid};

/// Relative eigenvalue floor below which a component cannot be inverted.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Component range used by default for BIC selection.
pub const DEFAULT_M_RANGE: RangeInclusive<usize> = 2..=9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BicForm {
    /// `log{n⁻¹ RSS} + (m + 1) log n`. The penalty dominates, so this almost
    /// always returns the smallest `m` in range.
    AsPrinted,
    /// `n log{n⁻¹ RSS} + (m + 1) log n`.
    #[default]
    Standard,
}

/// A least-squares fit of `Y` on the leading `m` principal components of
/// the curves restricted to `[0, θ]`.
#[derive(Clone, Debug)]
pub struct PcFit {
    pub theta: f64,
    pub m: usize,
    pub eigen: EigenSystem,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// `Σ_j β_j φ̂_j` on the full grid, zero beyond `theta`.
    pub slope: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
    /// `n⁻¹ RSS`.
    pub sigma2_hat: f64,
}

/// The untruncated fit used as a pilot for truncation and tuning.
pub type PilotFit = PcFit;

impl PcFit {
    pub fn n(&self) -> usize {
        self.fitted.len()
    }

    pub fn grid(&self) -> &Grid {
        self.eigen.grid()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict(self.intercept, &self.slope, x, self.grid(), self.theta)
    }
}

/// Fits on `[0, θ]` with exactly `m` components.
pub fn fit_pc_regression(curves: &CurveSet, y: &[f64], m: usize, theta: f64) -> Result<PcFit> {
    let eigen = eigensystem(curves, theta, m)?;
    let scores = scores(curves, &eigen)?;
    fit_projection(&Projection { eigen, scores }, y, m)
}

/// Fits with the first `m` components of a precomputed projection.
pub fn fit_projection(proj: &Projection, y: &[f64], m: usize) -> Result<PcFit> {
    let es = &proj.eigen;
    let n = proj.scores.nrows();
    if y.len() != n {
        return Err(Error::Dimension {
            what: "responses",
            expected: n,
            found: y.len(),
        });
    }
    if n < m + 2 {
        return Err(Error::InsufficientData {
            needed: m + 2,
            found: n,
        });
    }
    if m == 0 || m > es.m() {
        return Err(Error::TooManyComponents {
            requested: m,
            max_feasible: es.m(),
        });
    }
    let usable = es.usable_components(EIGEN_FLOOR);
    if m > usable {
        return Err(Error::IllConditioned {
            m,
            max_usable: usable,
        });
    }

    let y_bar = mean(y);
    let nf = n as f64;
    let beta: Vec<f64> = (0..m)
        .map(|j| {
            let cross: f64 = y
                .iter()
                .zip(proj.scores.column(j).iter())
                .map(|(yi, s)| (yi - y_bar) * s)
                .sum();
            cross / (nf * es.eigenvalues()[j])
        })
        .collect();

    let g = es.grid().len();
    let mut slope = vec![0.0; g];
    for (b, phi) in beta.iter().zip(es.eigenfunctions()) {
        for (s, p) in slope.iter_mut().zip(phi) {
            *s += b * p;
        }
    }
    let intercept = y_bar - es.integrate(&slope, es.mean_curve());

    let fitted: Vec<f64> = (0..n)
        .map(|i| y_bar + (0..m).map(|j| beta[j] * proj.scores[(i, j)]).sum::<f64>())
        .collect();
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();

    Ok(PcFit {
        theta: es.domain_theta(),
        m,
        eigen: es.leading(m)?,
        beta,
        intercept,
        slope,
        fitted,
        rss,
        sigma2_hat: rss / nf,
    })
}

/// `a + ∫_0^θ b x`.
pub fn predict(intercept: f64, slope: &[f64], x: &[f64], grid: &Grid, theta: f64) -> Result<f64> {
    Ok(intercept + restricted_inner_product(slope, x, grid, theta)?)
}

/// `σ̂² = n⁻¹ Σ (y_i − ǎ − ∫ b̌ X_i)²`.
pub fn residual_variance(fit: &PcFit, curves: &CurveSet, y: &[f64]) -> Result<f64> {
    if y.len() != curves.n() {
        return Err(Error::Dimension {
            what: "responses",
            expected: curves.n(),
            found: y.len(),
        });
    }
    let mut acc = 0.0;
    for (x, yi) in curves.iter().zip(y) {
        acc += (yi - fit.predict(x)?).powi(2);
    }
    Ok(acc / y.len() as f64)
}

pub fn bic(rss: f64, n: usize, m: usize, form: BicForm) -> f64 {
    let nf = n as f64;
    let fit_term = (rss / nf).ln();
    let penalty = (m as f64 + 1.0) * nf.ln();
    match form {
        BicForm::AsPrinted => fit_term + penalty,
        BicForm::Standard => nf * fit_term + penalty,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub m: usize,
    pub rss: f64,
    pub bic: f64,
}

#[derive(Clone, Debug)]
pub struct BicSelection {
    pub m: usize,
    pub fits: Vec<PcFit>,
    pub table: Vec<BicRow>,
}

impl BicSelection {
    pub fn chosen(&self) -> &PcFit {
        self.fits
            .iter()
            .find(|f| f.m == self.m)
            .expect("chosen m has a fit")
    }

    pub fn into_chosen(self) -> PcFit {
        let m = self.m;
        self.fits
            .into_iter()
            .find(|f| f.m == m)
            .expect("chosen m has a fit")
    }
}

/// Untruncated fits for every feasible `m` in `m_range`; picks the smallest
/// BIC, preferring the smaller `m` on ties.
pub fn bic_select_m(
    curves: &CurveSet,
    y: &[f64],
    m_range: RangeInclusive<usize>,
    form: BicForm,
) -> Result<BicSelection> {
    let m_max = *m_range.end();
    if m_range.is_empty() || m_max == 0 {
        return Err(Error::Config(format!("empty component range {m_range:?}")));
    }
    let proj = Projection::new(curves, 1.0, m_max)?;
    bic_select_projection(&proj, y, m_range, form)
}

pub(crate) fn bic_select_projection(
    proj: &Projection,
    y: &[f64],
    m_range: RangeInclusive<usize>,
    form: BicForm,
) -> Result<BicSelection> {
    let n = y.len();
    let mut fits = Vec::new();
    let mut table = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for m in m_range.clone() {
        let Ok(fit) = fit_projection(proj, y, m) else {
            continue;
        };
        let score = bic(fit.rss, n, m, form);
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((m, score));
        }
        table.push(BicRow {
            m,
            rss: fit.rss,
            bic: score,
        });
        fits.push(fit);
    }
    let (m, _) = best.ok_or_else(|| {
        Error::NoFeasibleCandidate(format!("no feasible number of components in {m_range:?}"))
    })?;
    Ok(BicSelection { m, fits, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::inner_product;
    use crate::testutil::{linear_response, trig_curves};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_response_gives_zero_slope() {
        let curves = trig_curves(30, 51, 9, 1);
        let fit = fit_pc_regression(&curves, &vec![4.25; 30], 4, 1.0).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        assert!((fit.intercept - 4.25).abs() < 1e-15);
    }

    #[test]
    fn recovers_planted_eigen_slope() {
        let curves = trig_curves(40, 51, 9, 2);
        let es = eigensystem(&curves, 1.0, 5).unwrap();
        let b: Vec<f64> = es.eigenfunctions()[0].iter().map(|p| 3.0 * p).collect();
        let y = linear_response(&curves, 2.0, &b);
        let fit = fit_pc_regression(&curves, &y, 5, 1.0).unwrap();
        assert!((fit.beta[0] - 3.0).abs() < 1e-6);
        for bj in &fit.beta[1..] {
            assert!(bj.abs() < 1e-6);
        }
        assert!((fit.intercept - 2.0).abs() < 1e-6);
        for (x, yi) in curves.iter().zip(&y) {
            assert!((fit.predict(x).unwrap() - yi).abs() < 1e-6);
        }
        assert!(residual_variance(&fit, &curves, &y).unwrap() <= 1e-10);
    }

    #[test]
    fn matches_r_form_and_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let curves = trig_curves(25, 31, 9, 5);
        let y: Vec<f64> = (0..25).map(|_| rng.random_range(-3.0..3.0)).collect();
        for theta in [1.0, 0.6] {
            let m = 4;
            let fit = fit_pc_regression(&curves, &y, m, theta).unwrap();
            let es = &fit.eigen;
            let (xbar, k) = crate::fpca::empirical_covariance(&curves).unwrap();
            let ybar = y.iter().sum::<f64>() / 25.0;
            let g = curves.grid().len();
            let r: Vec<f64> = (0..g)
                .map(|t| {
                    curves
                        .iter()
                        .zip(&y)
                        .map(|(x, yi)| (yi - ybar) * (x[t] - xbar[t]))
                        .sum::<f64>()
                        / 25.0
                })
                .collect();
            let w = curves.grid().restricted_weights(theta).unwrap();
            let mut a: DMatrix<f64> = DMatrix::zeros(m, m);
            let mut rhs: DVector<f64> = DVector::zeros(m);
            for kk in 0..m {
                let pk = &es.eigenfunctions()[kk];
                rhs[kk] = (0..w.len()).map(|t| w[t] * r[t] * pk[t]).sum();
                for j in 0..m {
                    let pj = &es.eigenfunctions()[j];
                    let mut acc = 0.0;
                    for t1 in 0..w.len() {
                        for t2 in 0..w.len() {
                            acc += w[t1] * w[t2] * pk[t2] * pj[t1] * k[(t1, t2)];
                        }
                    }
                    a[(kk, j)] = acc;
                }
                let r_form = rhs[kk] / es.eigenvalues()[kk];
                assert!((r_form - fit.beta[kk]).abs() < 1e-10);
            }
            let solved = a.lu().solve(&rhs).unwrap();
            for j in 0..m {
                assert!((solved[j] - fit.beta[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn slope_and_intercept_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let curves = trig_curves(30, 41, 9, 8);
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fit = fit_pc_regression(&curves, &y, 3, 1.0).unwrap();
        for t in 0..41 {
            let lc: f64 = (0..3).map(|j| fit.beta[j] * fit.eigen.eigenfunctions()[j][t]).sum();
            assert!((lc - fit.slope[t]).abs() < 1e-12);
        }
        let ybar = y.iter().sum::<f64>() / 30.0;
        let xbar = curves.mean_curve();
        let want = ybar - inner_product(&fit.slope, &xbar, curves.grid()).unwrap();
        assert!((fit.intercept - want).abs() < 1e-12);
    }

    #[test]
    fn fitted_values_are_orthogonal_to_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let curves = trig_curves(50, 41, 9, 11);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fit = fit_pc_regression(&curves, &y, 5, 0.7).unwrap();
        let preds: Vec<f64> = curves.iter().map(|x| fit.predict(x).unwrap()).collect();
        let ybar = y.iter().sum::<f64>() / 50.0;
        let var = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / 50.0;
        let mean_pred = preds.iter().sum::<f64>() / 50.0;
        assert!((mean_pred - ybar).abs() < 1e-9);
        let cross: f64 = preds.iter().zip(&y).map(|(p, yi)| p * (p - yi)).sum();
        assert!(cross.abs() < 1e-6 * 50.0 * var);
    }

    #[test]
    fn predict_identities() {
        let grid = Grid::uniform(11).unwrap();
        let x: Vec<f64> = grid.points().iter().map(|t| t.cos()).collect();
        assert_eq!(predict(1.5, &[0.0; 11], &x, &grid, 0.4).unwrap(), 1.5);
        let b: Vec<f64> = grid.points().to_vec();
        assert_eq!(
            predict(0.0, &b, &x, &grid, 1.0).unwrap(),
            inner_product(&b, &x, &grid).unwrap()
        );
    }

    #[test]
    fn residual_variance_of_alternating_residuals() {
        let curves = trig_curves(20, 21, 9, 3);
        let y0 = vec![0.0; 20];
        let fit = fit_pc_regression(&curves, &y0, 2, 1.0).unwrap();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((residual_variance(&fit, &curves, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ill_conditioned_component_rejected() {
        // Curves spanned by two functions: the third eigenvalue is roundoff.
        let grid = Grid::uniform(21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = (0..12)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                grid.points().iter().map(|t| a + b * t).collect()
            })
            .collect();
        let curves = CurveSet::new(grid, rows).unwrap();
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert!(fit_pc_regression(&curves, &y, 2, 1.0).is_ok());
        assert!(matches!(
            fit_pc_regression(&curves, &y, 3, 1.0),
            Err(Error::IllConditioned { max_usable: 2, .. })
        ));
    }

    #[test]
    fn bic_picks_true_dimension_on_noiseless_data() {
        let curves = trig_curves(60, 51, 11, 21);
        let es = eigensystem(&curves, 1.0, 3).unwrap();
        let b: Vec<f64> = (0..51)
            .map(|t| {
                2.0 * es.eigenfunctions()[0][t] - 1.5 * es.eigenfunctions()[1][t]
                    + 0.8 * es.eigenfunctions()[2][t]
            })
            .collect();
        let y = linear_response(&curves, 0.5, &b);
        for form in [BicForm::AsPrinted, BicForm::Standard] {
            let sel = bic_select_m(&curves, &y, 2..=9, form).unwrap();
            assert_eq!(sel.m, 3, "{form:?}: {:?}", sel.table);
            assert_eq!(sel.table.len(), 8);
        }
    }

    #[test]
    fn bic_penalty_breaks_flat_ties_toward_small_m() {
        for form in [BicForm::AsPrinted, BicForm::Standard] {
            let scores: Vec<f64> = (2..=9).map(|m| bic(100.0, 100, m, form)).collect();
            assert!(scores.windows(2).all(|w| w[1] > w[0]));
        }
        // RSS/n = 1 means the fit term vanishes.
        assert!((bic(100.0, 100, 2, BicForm::AsPrinted) - 3.0 * 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_range_is_an_error() {
        let curves = trig_curves(10, 21, 5, 1);
        #[allow(clippy::reversed_empty_ranges)]
        let r = bic_select_m(&curves, &[0.0; 10], 5..=2, BicForm::AsPrinted);
        assert!(r.is_err());
    }
}
