use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use truncflm::bootstrap::Bootstrap;
use truncflm::io::{load_curves, load_data, load_fit, write_fit, write_responses};
use truncflm::simstudy::{run_study, table1, table2, write_records_csv};
use truncflm::truncated::{ThetaGrid, TruncatedFit};
use truncflm::tuning::{Tuner, TuningReport};
use truncflm::{CurveSet, Result};

use crate::config::{BootstrapConfig, FitConfig, PredictConfig, RunConfig, SimulateConfig};

pub fn execute(config: &RunConfig) -> Result<String> {
    fs::create_dir_all(config.out_dir())?;
    write_json(&config.out_dir().join("config.json"), config)?;
    match config {
        RunConfig::Fit(c) => fit(c),
        RunConfig::Tune(c) => tune(c),
        RunConfig::Simulate(c) => simulate(c),
        RunConfig::Bootstrap(c) => bootstrap(c),
        RunConfig::Predict(c) => predict(c),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn prepare(c: &FitConfig) -> Result<(CurveSet, Vec<f64>, ThetaGrid)> {
    let (curves, y) = load_data(&c.curves, &c.responses)?;
    let thetas = ThetaGrid::from_grid(curves.grid(), c.theta_min, c.theta_max)?;
    Ok((curves, y, thetas))
}

fn fit_with(c: &FitConfig, curves: &CurveSet, y: &[f64], thetas: &ThetaGrid) -> Result<(TruncatedFit, Option<TuningReport>)> {
    let tuner = Tuner::new(curves, y, thetas, &c.tuning)?;
    Ok(match c.lambda {
        Some(lambda) => (tuner.fit_at_lambda(c.method, lambda)?, None),
        None => {
            let tuned = tuner.fit(c.method)?;
            (tuned.fit, Some(tuned.report))
        }
    })
}

fn write_fit_outputs(out: &Path, fit: &TruncatedFit, report: Option<&TuningReport>) -> Result<()> {
    write_fit(fit, BufWriter::new(File::create(out.join("fit.json"))?))?;
    let mut trace = String::from("theta,objective,m_used\n");
    for p in &fit.objective_trace {
        writeln!(trace, "{},{},{}", p.theta, csv_cell(p.objective), p.m_used).unwrap();
    }
    write_text(&out.join("trace.csv"), &trace)?;
    let mut slope = String::from("t,b_hat\n");
    for (t, b) in fit.grid.points().iter().zip(&fit.b_hat) {
        writeln!(slope, "{t},{b}").unwrap();
    }
    write_text(&out.join("slope.csv"), &slope)?;
    if let Some(r) = report {
        write_tuning_outputs(out, r)?;
    }
    Ok(())
}

fn write_tuning_outputs(out: &Path, r: &TuningReport) -> Result<()> {
    write_json(&out.join("tuning.json"), r)?;
    let mut lam = String::from("lambda,theta_lambda,v_lambda,p_b,degenerate\n");
    for rec in &r.records {
        writeln!(
            lam,
            "{},{},{},{},{}",
            rec.lambda, rec.theta_lambda, rec.v_lambda, rec.p_b, rec.degenerate
        )
        .unwrap();
    }
    write_text(&out.join("lambda.csv"), &lam)?;
    let mut risk = String::from("theta,s_y,s_b,m_used\n");
    let rc = &r.risk_curve;
    for k in 0..rc.thetas.len() {
        writeln!(risk, "{},{},{},{}", rc.thetas[k], rc.s_y[k], rc.s_b[k], rc.m_used[k]).unwrap();
    }
    write_text(&out.join("risk.csv"), &risk)
}

fn fit_summary(fit: &TruncatedFit) -> String {
    format!(
        "method {}\ntheta_hat {}\na_hat {}\nm {}\nlambda {}\n",
        fit.method, fit.theta_hat, fit.a_hat, fit.m, fit.lambda
    )
}

fn fit(c: &FitConfig) -> Result<String> {
    let (curves, y, thetas) = prepare(c)?;
    let (fit, report) = fit_with(c, &curves, &y, &thetas)?;
    write_fit_outputs(&c.out, &fit, report.as_ref())?;
    let summary = fit_summary(&fit);
    write_text(&c.out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn tune(c: &FitConfig) -> Result<String> {
    let (curves, y, thetas) = prepare(c)?;
    let tuner = Tuner::new(&curves, &y, &thetas, &c.tuning)?;
    let tuned = tuner.fit(c.method)?;
    let r = &tuned.report;
    write_tuning_outputs(&c.out, r)?;
    let summary = format!(
        "method {}\nlambda_star {}\nm_star {}\npilot_m {}\nsigma2_hat {}\ntheta_bar {}\n",
        r.method, r.lambda_star, r.m_star, r.pilot_m, r.sigma2_hat, r.bsimp.theta_bar
    );
    write_text(&c.out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn simulate(c: &SimulateConfig) -> Result<String> {
    let report = run_study(&c.sim)?;
    write_json(&c.out.join("report.json"), &report)?;
    let reports = std::slice::from_ref(&report);
    let (t1, t2) = (table1(reports), table2(reports));
    write_text(&c.out.join("table1.txt"), &t1)?;
    write_text(&c.out.join("table2.txt"), &t2)?;
    write_records_csv(&report.records, BufWriter::new(File::create(c.out.join("replicates.csv"))?))?;
    let mut summary = format!("{t1}\n{t2}");
    if report.summary.failures > 0 {
        writeln!(summary, "failed replicates: {}", report.summary.failures).unwrap();
    }
    Ok(summary)
}

fn bootstrap(c: &BootstrapConfig) -> Result<String> {
    let (curves, y, thetas) = prepare(&c.fit)?;
    let (fit, report) = fit_with(&c.fit, &curves, &y, &thetas)?;
    write_fit_outputs(&c.fit.out, &fit, report.as_ref())?;
    let mut opts = c.bootstrap.clone();
    opts.tuning = c.fit.tuning.clone();
    let bands = Bootstrap::new(&curves, &y, &fit, &thetas, &opts)?.run()?;
    bands.write_csv(BufWriter::new(File::create(c.fit.out.join("bands.csv"))?))?;
    write_json(&c.fit.out.join("bootstrap.json"), &bands)?;
    let max_sd = bands.pointwise_sd.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "{}replicates {}\nretries {}\nmax_pointwise_sd {}\n",
        fit_summary(&fit),
        bands.replicates,
        bands.retries,
        max_sd
    ))
}

fn predict(c: &PredictConfig) -> Result<String> {
    let fit = load_fit(&c.fit)?;
    let curves = load_curves(&c.curves)?;
    if curves.grid() != &fit.grid {
        return Err(truncflm::Error::Domain(
            "curves are not observed on the grid of the fit".into(),
        ));
    }
    let preds = fit.fitted(&curves)?;
    write_responses(&preds, BufWriter::new(File::create(c.out.join("predictions.csv"))?))?;
    Ok(format!("{} predictions\n", preds.len()))
}
