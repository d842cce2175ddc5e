#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use truncflm::fpca::Projection;
use truncflm::numerics::restricted_inner_product;
use truncflm::simstudy::{replicate_data, SimConfig};
use truncflm::CurveSet;

/// Dense reference computations written against raw arrays. Nothing here
/// calls into the library beyond reading the grid and curve values.
pub struct Oracle {
    pub t: Vec<f64>,
    pub w_full: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl Oracle {
    pub fn new(curves: &CurveSet) -> Self {
        let t = curves.grid().points().to_vec();
        let w_full = trapezoid(&t, t.len() - 1);
        Oracle {
            t,
            w_full,
            x: curves.iter().map(|c| c.to_vec()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn weights_to(&self, theta: f64) -> Vec<f64> {
        let j = self.t.iter().rposition(|&s| s <= theta + 1e-12).unwrap();
        trapezoid(&self.t, j)
    }

    pub fn int(&self, f: &[f64], g: &[f64], w: &[f64]) -> f64 {
        f.iter().zip(g).zip(w).map(|((a, b), c)| a * b * c).sum()
    }

    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.t.len())
            .map(|k| self.x.iter().map(|c| c[k]).sum::<f64>() / n)
            .collect()
    }

    /// `K̂(s, u)` with the `1/n` convention.
    pub fn kernel(&self, s: usize, u: usize, xbar: &[f64]) -> f64 {
        self.x.iter().map(|c| (c[s] - xbar[s]) * (c[u] - xbar[u])).sum::<f64>() / self.n() as f64
    }

    /// Leading `m` eigenpairs on `[0, θ]`, eigenfunctions zero beyond `θ`
    /// and signed so their largest-magnitude entry is positive.
    pub fn eigen(&self, theta: f64, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let w = self.weights_to(theta);
        let idx: Vec<usize> = (0..self.t.len()).filter(|&k| w[k] > 0.0).collect();
        let xbar = self.mean_curve();
        let d = idx.len();
        let mut a = DMatrix::<f64>::zeros(d, d);
        for (p, &s) in idx.iter().enumerate() {
            for (q, &u) in idx.iter().enumerate() {
                a[(p, q)] = w[s].sqrt() * self.kernel(s, u, &xbar) * w[u].sqrt();
            }
        }
        let eig = a.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let mut vals = Vec::new();
        let mut funcs = Vec::new();
        for &o in order.iter().take(m) {
            vals.push(eig.eigenvalues[o]);
            let mut phi = vec![0.0; self.t.len()];
            for (p, &s) in idx.iter().enumerate() {
                phi[s] = eig.eigenvectors[(p, o)] / w[s].sqrt();
            }
            let mut peak = 0;
            for k in 0..phi.len() {
                if phi[k].abs() > phi[peak].abs() {
                    peak = k;
                }
            }
            if phi[peak] < 0.0 {
                phi.iter_mut().for_each(|v| *v = -*v);
            }
            funcs.push(phi);
        }
        (vals, funcs)
    }

    /// Intercept and coefficients from the normal equations
    /// `(ΞᵀΞ) β = Ξᵀ(y − ȳ)` on centred scores.
    pub fn normal_equations(&self, y: &[f64], theta: f64, m: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let w = self.weights_to(theta);
        let (_, phi) = self.eigen(theta, m);
        let xbar = self.mean_curve();
        let n = self.n();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut xi = DMatrix::<f64>::zeros(n, m);
        for i in 0..n {
            let xc: Vec<f64> = self.x[i].iter().zip(&xbar).map(|(a, b)| a - b).collect();
            for j in 0..m {
                xi[(i, j)] = self.int(&xc, &phi[j], &w);
            }
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
        let lhs = xi.transpose() * &xi;
        let rhs = xi.transpose() * yc;
        let beta = lhs.lu().solve(&rhs).expect("nonsingular normal equations");
        let mut b = vec![0.0; self.t.len()];
        for j in 0..m {
            for k in 0..b.len() {
                b[k] += beta[j] * phi[j][k];
            }
        }
        let a = ybar - self.int(&b, &xbar, &w);
        (a, beta.iter().copied().collect(), b)
    }

    /// Least-squares `(a, b)` of `y` on an intercept and the first `m`
    /// scores, solved through an SVD of the raw design.
    pub fn pc_fit(&self, y: &[f64], theta: f64, m: usize) -> (f64, Vec<f64>) {
        let w = self.weights_to(theta);
        let (_, phi) = self.eigen(theta, m);
        let n = self.n();
        let mut design = DMatrix::<f64>::zeros(n, m + 1);
        for i in 0..n {
            design[(i, 0)] = 1.0;
            for j in 0..m {
                design[(i, j + 1)] = self.int(&self.x[i], &phi[j], &w);
            }
        }
        let coef = design
            .svd(true, true)
            .solve(&DVector::from_column_slice(y), 1e-14)
            .unwrap();
        let mut b = vec![0.0; self.t.len()];
        for j in 0..m {
            for k in 0..b.len() {
                b[k] += coef[j + 1] * phi[j][k];
            }
        }
        let a = (0..n).map(|i| y[i] - self.int(&b, &self.x[i], &w)).sum::<f64>() / n as f64;
        (a, b)
    }
}

/// Trapezoid weights on `t[0..=last]`, zero afterwards.
pub fn trapezoid(t: &[f64], last: usize) -> Vec<f64> {
    let mut w = vec![0.0; t.len()];
    for k in 0..last {
        let h = t[k + 1] - t[k];
        w[k] += h / 2.0;
        w[k + 1] += h / 2.0;
    }
    w
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Curves from the simulation process with a slope spanned by the first
/// `m` eigenfunctions of the curves on `[0, θ₀]`, and exact responses
/// `a₀ + ∫_0^{θ₀} b₀ X`.
pub struct NoiselessData {
    pub curves: CurveSet,
    pub y: Vec<f64>,
    pub b0: Vec<f64>,
    pub a0: f64,
    pub theta0: f64,
}

pub fn noiseless_data(seed: u64, n: usize, m: usize, theta0: f64) -> NoiselessData {
    let cfg = SimConfig {
        n,
        seed,
        ..SimConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let (curves, _) = replicate_data(&cfg, &vec![0.0; grid.len()], 0).unwrap();
    let eigen = Projection::new(&curves, theta0, m).unwrap().eigen;
    let mut b0 = vec![0.0; grid.len()];
    for (j, phi) in eigen.eigenfunctions().iter().take(m).enumerate() {
        let c = if j % 2 == 0 { 3.0 } else { -2.0 } / (j + 1) as f64;
        for (b, v) in b0.iter_mut().zip(phi) {
            *b += c * v;
        }
    }
    let a0 = 1.5;
    let y = curves
        .iter()
        .map(|x| a0 + restricted_inner_product(&b0, x, &grid, theta0).unwrap())
        .collect();
    NoiselessData {
        curves,
        y,
        b0,
        a0,
        theta0,
    }
}
