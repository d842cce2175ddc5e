use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fpca::CurveSet;
use crate::numerics::{inner_product, Grid};

/// Curves from the first `comps` trigonometric basis functions with
/// exponentially decaying coefficient variances.
pub(crate) fn trig_curves(n: usize, g: usize, comps: usize, seed: u64) -> CurveSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::uniform(g).unwrap();
    let basis: Vec<Vec<f64>> = (1..=comps)
        .map(|k| crate::numerics::trig_basis(k, &grid).unwrap())
        .collect();
    let rows = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..comps)
                .map(|k| {
                    let s: f64 = rng.sample(StandardNormal);
                    s * (-(k as f64) / 4.0).exp().sqrt()
                })
                .collect();
            (0..g)
                .map(|t| z.iter().zip(&basis).map(|(zk, e)| zk * e[t]).sum())
                .collect()
        })
        .collect();
    CurveSet::new(grid, rows).unwrap()
}

pub(crate) fn linear_response(curves: &CurveSet, a: f64, b: &[f64]) -> Vec<f64> {
    curves
        .iter()
        .map(|x| a + inner_product(b, x, curves.grid()).unwrap())
        .collect()
}
