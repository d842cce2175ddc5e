//! Grids on `[0, 1]`, trapezoid quadrature and the trigonometric basis.
//!
//! Every integral in the crate is a trapezoid sum over the stored grid.
//! Integrals over `[0, θ]` stop at the last grid point not exceeding `θ`
//! (no partial panels), so every objective indexed by `θ` is piecewise
//! constant between grid points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when deciding whether a truncation point sits on a grid point.
const ON_GRID_TOL: f64 = 1e-12;

/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Uniform grid with `size` points including both endpoints.
    pub fn uniform(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Domain(format!(
                "a grid needs at least 2 points, got {size}"
            )));
        }
        let last = (size - 1) as f64;
        let points = (0..size).map(|k| k as f64 / last).collect();
        Self::from_points(points)
    }

    /// Builds a grid from explicit points, which must run strictly upward
    /// from exactly 0 to exactly 1.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Domain(format!(
                "a grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("grid points must be finite".into()));
        }
        if points[0] != 0.0 || points[points.len() - 1] != 1.0 {
            return Err(Error::Domain(
                "grid must start at 0 and end at 1".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "grid points must be strictly increasing".into(),
            ));
        }
        let weights = trapezoid_weights(&points);
        Ok(Grid { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the last grid point `<= theta`, or an error when `theta <= 0`
    /// or `theta > 1`.
    pub fn last_index_within(&self, theta: f64) -> Result<usize> {
        check_theta(theta)?;
        let idx = self
            .points
            .partition_point(|&p| p <= theta + ON_GRID_TOL);
        // points[0] == 0 < theta, so idx >= 1
        Ok(idx - 1)
    }

    /// Trapezoid weights on `[0, t_J]` where `t_J` is the last grid point
    /// `<= theta`. The returned vector has length `J + 1`.
    pub fn restricted_weights(&self, theta: f64) -> Result<Vec<f64>> {
        let last = self.last_index_within(theta)?;
        if last == self.len() - 1 {
            return Ok(self.weights.clone());
        }
        Ok(trapezoid_weights(&self.points[..=last]))
    }

    /// Grid point closest to `theta`.
    pub fn snap(&self, theta: f64) -> f64 {
        let mut best = self.points[0];
        for &p in &self.points {
            if (p - theta).abs() < (best - theta).abs() {
                best = p;
            }
        }
        best
    }

    pub fn check_len(&self, what: &'static str, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::Dimension {
                what,
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::from_points(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Self {
        grid.points
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0 + ON_GRID_TOL) {
        return Err(Error::Domain(format!(
            "truncation point must lie in (0, 1], got {theta}"
        )));
    }
    Ok(())
}

/// Composite trapezoid weights for an ordered set of nodes.
pub(crate) fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let left = if k == 0 { points[0] } else { points[k - 1] };
            let right = if k == n - 1 { points[n - 1] } else { points[k + 1] };
            0.5 * (right - left)
        })
        .collect()
}

/// `∫ f g` over `[0, 1]`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    grid.check_len("inner product (f)", f.len())?;
    grid.check_len("inner product (g)", g.len())?;
    Ok(weighted_dot(f, g, grid.weights()))
}

/// `∫_0^θ f g`, integrating up to the last grid point `<= theta`.
pub fn restricted_inner_product(f: &[f64], g: &[f64], grid: &Grid, theta: f64) -> Result<f64> {
    grid.check_len("inner product (f)", f.len())?;
    grid.check_len("inner product (g)", g.len())?;
    let w = grid.restricted_weights(theta)?;
    Ok(weighted_dot(f, g, &w))
}

/// `Σ_k w_k f_k g_k` over the first `w.len()` entries.
#[inline]
pub(crate) fn weighted_dot(f: &[f64], g: &[f64], w: &[f64]) -> f64 {
    w.iter()
        .zip(f)
        .zip(g)
        .map(|((w, f), g)| w * f * g)
        .sum()
}

/// Trigonometric basis element `η_k`: `η_1 = 1`, `η_{2j}(t) = sin(2^j π t)`,
/// `η_{2j+1}(t) = cos(2^j π t)`.
pub fn trig_basis_at(k_index: usize, t: f64) -> f64 {
    debug_assert!(k_index >= 1);
    if k_index == 1 {
        return 1.0;
    }
    let octave = (k_index / 2) as i32;
    let freq = 2f64.powi(octave) * PI;
    if k_index % 2 == 0 {
        (freq * t).sin()
    } else {
        (freq * t).cos()
    }
}

/// `η_{k_index}` sampled on the grid.
pub fn trig_basis(k_index: usize, grid: &Grid) -> Result<Vec<f64>> {
    if k_index == 0 {
        return Err(Error::Domain("basis index starts at 1".into()));
    }
    Ok(grid
        .points()
        .iter()
        .map(|&t| trig_basis_at(k_index, t))
        .collect())
}

/// `n⁻¹ Σ v_i`, or 0 for an empty slice.
pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
