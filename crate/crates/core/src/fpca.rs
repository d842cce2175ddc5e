//! Functional principal components on `[0, θ]`.
//!
//! The covariance operator is discretised with the trapezoid weights `W` of
//! the (restricted) grid and diagonalised in the symmetric form
//! `W^{1/2} K W^{1/2}`; mapping eigenvectors back through `W^{-1/2}` gives
//! eigenfunctions that are orthonormal in `L²[0, θ]`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::{weighted_dot, Grid};

/// Eigenvalues in `(-CLAMP_TOL·scale, 0)` are treated as roundoff.
const CLAMP_TOL: f64 = 1e-10;

/// `n` curves sampled on a common grid, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    grid: Grid,
    n: usize,
    values: Vec<f64>,
}

impl CurveSet {
    pub fn new(grid: Grid, rows: Vec<Vec<f64>>) -> Result<Self> {
        let g = grid.len();
        let mut values = Vec::with_capacity(rows.len() * g);
        for row in &rows {
            grid.check_len("curve", row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("curve values must be finite".into()));
            }
            values.extend_from_slice(row);
        }
        Ok(CurveSet {
            grid,
            n: rows.len(),
            values,
        })
    }

    pub fn from_flat(grid: Grid, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * grid.len() {
            return Err(Error::Dimension {
                what: "curve matrix",
                expected: n * grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("curve values must be finite".into()));
        }
        Ok(CurveSet { grid, n, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn curve(&self, i: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[i * g..(i + 1) * g]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.grid.len())
    }

    /// Pointwise mean curve `X̄`.
    pub fn mean_curve(&self) -> Vec<f64> {
        let g = self.grid.len();
        let mut mean = vec![0.0; g];
        for row in self.iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// `∫_0^θ X_i f` for every curve, using precomputed restricted weights.
    pub(crate) fn integrals_with(&self, f: &[f64], weights: &[f64]) -> Vec<f64> {
        self.iter().map(|x| weighted_dot(x, f, weights)).collect()
    }
}

fn require_two(curves: &CurveSet) -> Result<()> {
    if curves.n() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: curves.n(),
        });
    }
    Ok(())
}

/// Mean curve and `K̂(t_a, t_b) = n⁻¹ Σ_i (X_i − X̄)(t_a)(X_i − X̄)(t_b)` on
/// all grid pairs.
pub fn empirical_covariance(curves: &CurveSet) -> Result<(Vec<f64>, DMatrix<f64>)> {
    require_two(curves)?;
    let mean = curves.mean_curve();
    let g = curves.grid().len();
    let centered = centered_matrix(curves, &mean, g, None);
    let k = centered.transpose() * &centered / curves.n() as f64;
    Ok((mean, k))
}

/// Centered curves on the first `cols` grid points, columns optionally
/// scaled by `sqrt(w)`.
fn centered_matrix(curves: &CurveSet, mean: &[f64], cols: usize, weights: Option<&[f64]>) -> DMatrix<f64> {
    DMatrix::from_fn(curves.n(), cols, |i, k| {
        let d = curves.curve(i)[k] - mean[k];
        match weights {
            Some(w) => d * w[k].sqrt(),
            None => d,
        }
    })
}

/// Leading eigenpairs of the covariance operator restricted to `[0, θ]`.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    grid: Grid,
    domain_theta: f64,
    last_index: usize,
    restricted_weights: Vec<f64>,
    mean_curve: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Each entry has the full grid length; zero beyond `domain_theta`.
    eigenfunctions: Vec<Vec<f64>>,
}

impl EigenSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain_theta(&self) -> f64 {
        self.domain_theta
    }

    /// Index of the last grid point inside the domain.
    pub fn last_index(&self) -> usize {
        self.last_index
    }

    pub fn restricted_weights(&self) -> &[f64] {
        &self.restricted_weights
    }

    pub fn mean_curve(&self) -> &[f64] {
        &self.mean_curve
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.eigenfunctions
    }

    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of leading components whose eigenvalue clears
    /// `floor · ω̂_1`.
    pub fn usable_components(&self, floor: f64) -> usize {
        let Some(&top) = self.eigenvalues.first() else {
            return 0;
        };
        if top <= 0.0 {
            return 0;
        }
        self.eigenvalues
            .iter()
            .take_while(|&&w| w > 0.0 && w >= floor * top)
            .count()
    }

    /// Copy keeping only the first `m` components.
    pub fn leading(&self, m: usize) -> Result<EigenSystem> {
        if m == 0 || m > self.m() {
            return Err(Error::TooManyComponents {
                requested: m,
                max_feasible: self.m(),
            });
        }
        let mut es = self.clone();
        es.eigenvalues.truncate(m);
        es.eigenfunctions.truncate(m);
        Ok(es)
    }

    /// `∫_0^θ f g` on this system's domain.
    pub fn integrate(&self, f: &[f64], g: &[f64]) -> f64 {
        weighted_dot(f, g, &self.restricted_weights)
    }
}

/// Largest number of components estimable on `[0, θ]` from `n` curves.
pub fn max_components(n: usize, grid: &Grid, theta: f64) -> Result<usize> {
    let last = grid.last_index_within(theta)?;
    if last == 0 {
        return Ok(0);
    }
    Ok((n.saturating_sub(1)).min(last + 1))
}

/// Top-`m` eigensystem of `K̂` restricted to `[0, θ]²`.
pub fn eigensystem(curves: &CurveSet, theta: f64, m: usize) -> Result<EigenSystem> {
    require_two(curves)?;
    let max_feasible = max_components(curves.n(), curves.grid(), theta)?;
    if m == 0 || m > max_feasible {
        return Err(Error::TooManyComponents {
            requested: m,
            max_feasible,
        });
    }
    solve_eigensystem(curves, theta, m)
}

/// Like [`eigensystem`], but keeps `min(m_max, feasible)` components instead
/// of failing. Fails only when nothing is feasible.
pub fn eigensystem_up_to(curves: &CurveSet, theta: f64, m_max: usize) -> Result<EigenSystem> {
    require_two(curves)?;
    let max_feasible = max_components(curves.n(), curves.grid(), theta)?;
    let m = m_max.min(max_feasible);
    if m == 0 {
        return Err(Error::TooManyComponents {
            requested: m_max,
            max_feasible,
        });
    }
    solve_eigensystem(curves, theta, m)
}

fn solve_eigensystem(curves: &CurveSet, theta: f64, m: usize) -> Result<EigenSystem> {
    let grid = curves.grid();
    let g = grid.len();
    let weights = grid.restricted_weights(theta)?;
    let last_index = weights.len() - 1;
    let mean = curves.mean_curve();

    let scaled = centered_matrix(curves, &mean, weights.len(), Some(&weights));
    let op = scaled.transpose() * &scaled / curves.n() as f64;
    let eig = SymmetricEigen::new(op);

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = eig.eigenvalues[order[0]].abs().max(1.0);
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = Vec::with_capacity(m);
    for &idx in order.iter().take(m) {
        let mut value = eig.eigenvalues[idx];
        if value < 0.0 {
            if value > -CLAMP_TOL * scale {
                value = 0.0;
            } else {
                return Err(Error::NegativeEigenvalue(value));
            }
        }
        let v = eig.eigenvectors.column(idx);
        let mut phi = vec![0.0; g];
        for (k, w) in weights.iter().enumerate() {
            phi[k] = v[k] / w.sqrt();
        }
        orient(&mut phi);
        eigenvalues.push(value);
        eigenfunctions.push(phi);
    }

    Ok(EigenSystem {
        grid: grid.clone(),
        domain_theta: theta.min(1.0),
        last_index,
        restricted_weights: weights,
        mean_curve: mean,
        eigenvalues,
        eigenfunctions,
    })
}

/// Flip so the entry of largest magnitude is positive (earliest on ties).
fn orient(phi: &mut [f64]) {
    let mut best = 0usize;
    for (k, v) in phi.iter().enumerate() {
        if v.abs() > phi[best].abs() {
            best = k;
        }
    }
    if phi[best] < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Principal component scores `ξ_ij = ∫_0^θ (X_i − X̄) φ̂_j`, as an `n × m`
/// matrix.
pub fn scores(curves: &CurveSet, es: &EigenSystem) -> Result<DMatrix<f64>> {
    if curves.grid() != es.grid() {
        return Err(Error::Dimension {
            what: "score grid",
            expected: es.grid().len(),
            found: curves.grid().len(),
        });
    }
    let mean = es.mean_curve();
    let w = es.restricted_weights();
    let mut out = DMatrix::zeros(curves.n(), es.m());
    let mut centered = vec![0.0; w.len()];
    for (i, x) in curves.iter().enumerate() {
        for (c, (xv, mv)) in centered.iter_mut().zip(x.iter().zip(mean)) {
            *c = xv - mv;
        }
        for (j, phi) in es.eigenfunctions().iter().enumerate() {
            out[(i, j)] = weighted_dot(&centered, phi, w);
        }
    }
    Ok(out)
}

/// An eigensystem together with the scores of the curves it was built from.
#[derive(Clone, Debug)]
pub struct Projection {
    pub eigen: EigenSystem,
    pub scores: DMatrix<f64>,
}

impl Projection {
    pub fn new(curves: &CurveSet, theta: f64, m_max: usize) -> Result<Self> {
        let eigen = eigensystem_up_to(curves, theta, m_max)?;
        let scores = scores(curves, &eigen)?;
        Ok(Projection { eigen, scores })
    }

    pub fn theta(&self) -> f64 {
        self.eigen.domain_theta()
    }
}
