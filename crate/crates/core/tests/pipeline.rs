mod common;

use common::noiseless_data;
use proptest::prelude::*;
use truncflm::bootstrap::{BootstrapOptions, Bootstrap};
use truncflm::io::{load_data, load_fit, write_curves, write_fit, write_responses};
use truncflm::numerics::inner_product;
use truncflm::simstudy::{model_slope, replicate_data, SimConfig};
use truncflm::truncated::{fit_method_a, Method, ThetaGrid};
use truncflm::tuning::{tune_and_fit, Tuner, TuningOptions};

fn model1(seed: u64, n: usize) -> (SimConfig, truncflm::CurveSet, Vec<f64>) {
    let cfg = SimConfig {
        n,
        seed,
        ..SimConfig::default()
    };
    let grid = cfg.grid().unwrap();
    let b0 = model_slope(&cfg, &grid).unwrap();
    let (curves, y) = replicate_data(&cfg, &b0, 0).unwrap();
    (cfg, curves, y)
}

#[test]
fn files_reproduce_the_in_memory_fit() {
    let (_, curves, y) = model1(3, 90);
    let dir = tempfile::tempdir().unwrap();
    let (xp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write_curves(&curves, std::fs::File::create(&xp).unwrap()).unwrap();
    write_responses(&y, std::fs::File::create(&yp).unwrap()).unwrap();
    let (c2, y2) = load_data(&xp, &yp).unwrap();
    assert_eq!((&c2, &y2), (&curves, &y));

    let thetas = ThetaGrid::default_for(curves.grid()).unwrap();
    let opts = TuningOptions::default();
    let direct = tune_and_fit(&curves, &y, Method::B, &thetas, &opts).unwrap();
    let reread = tune_and_fit(&c2, &y2, Method::B, &thetas, &opts).unwrap();
    assert_eq!(direct.fit, reread.fit);

    let fp = dir.path().join("fit.json");
    write_fit(&direct.fit, std::fs::File::create(&fp).unwrap()).unwrap();
    let loaded = load_fit(&fp).unwrap();
    assert_eq!(loaded, direct.fit);
    assert_eq!(loaded.fitted(&curves).unwrap(), direct.fit.fitted(&curves).unwrap());
}

#[test]
fn tuned_methods_land_near_the_truncation_point() {
    let (cfg, curves, y) = model1(17, 100);
    let thetas = ThetaGrid::default_for(curves.grid()).unwrap();
    let tuner = Tuner::new(&curves, &y, &thetas, &TuningOptions::default()).unwrap();
    for method in [Method::A, Method::B] {
        let tuned = tuner.fit(method).unwrap();
        assert!(
            (tuned.fit.theta_hat - cfg.theta0).abs() < 0.2,
            "method {method}: {}",
            tuned.fit.theta_hat
        );
        assert!(tuned.report.lambda_grid.contains(&tuned.report.lambda_star));
    }
}

/// Averaged over ten data sets, the bootstrap sd near `θ₀` exceeds the sd
/// deep inside the support.
#[test]
fn bootstrap_bands_widen_near_the_truncation_point() {
    let (mut near, mut interior) = (0.0, 0.0);
    for seed in 1..=10u64 {
        let (cfg, curves, y) = model1(seed, 100);
        let thetas = ThetaGrid::default_for(curves.grid()).unwrap();
        let opts = TuningOptions::default();
        let fit = tune_and_fit(&curves, &y, Method::B, &thetas, &opts).unwrap().fit;
        let boot = BootstrapOptions {
            replicates: 60,
            seed,
            tuning: opts,
            ..BootstrapOptions::default()
        };
        let bands = Bootstrap::new(&curves, &y, &fit, &thetas, &boot).unwrap().run().unwrap();
        let avg = |lo: f64, hi: f64| {
            let v: Vec<f64> = bands
                .grid
                .points()
                .iter()
                .zip(&bands.pointwise_sd)
                .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
                .map(|(_, s)| *s)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        near += avg(cfg.theta0 - 0.05, cfg.theta0 + 0.05);
        interior += avg(0.15, 0.3);
    }
    assert!(near > interior, "near {near} vs interior {interior}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_recovery(seed in 0u64..10_000, m in 2usize..6, k in 30usize..80) {
        let theta0 = k as f64 / 100.0;
        let d = noiseless_data(seed, 90, m, theta0);
        let grid = d.curves.grid();
        let thetas = ThetaGrid::default_for(grid).unwrap();
        let fit = fit_method_a(&d.curves, &d.y, m, 1e-8, &thetas).unwrap();
        let diff: Vec<f64> = fit.b_hat.iter().zip(&d.b0).map(|(p, q)| p - q).collect();
        let rel = inner_product(&diff, &diff, grid).unwrap() / inner_product(&d.b0, &d.b0, grid).unwrap();
        prop_assert!(rel <= 1e-4, "relative ISE {}", rel);
        prop_assert!((fit.theta_hat - theta0).abs() <= 0.02 + 1e-12, "theta_hat {}", fit.theta_hat);
        prop_assert!((fit.a_hat - d.a0).abs() <= 1e-6);
    }
}
