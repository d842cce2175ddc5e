use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use truncflm::bootstrap::BootstrapOptions;
use truncflm::simstudy::SimConfig;
use truncflm::truncated::{Method, DEFAULT_THETA_MIN};
use truncflm::tuning::TuningOptions;

/// Fully resolved description of one run. Written as `config.json` next to
/// the results and accepted back by `truncflm run --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Fit(FitConfig),
    Tune(FitConfig),
    Simulate(SimulateConfig),
    Bootstrap(BootstrapConfig),
    Predict(PredictConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub curves: PathBuf,
    pub responses: PathBuf,
    pub method: Method,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Fit at this `λ` instead of selecting one.
    pub lambda: Option<f64>,
    pub tuning: TuningOptions,
    pub out: PathBuf,
}

impl FitConfig {
    pub fn new(curves: PathBuf, responses: PathBuf, method: Method, out: PathBuf) -> Self {
        FitConfig {
            curves,
            responses,
            method,
            theta_min: DEFAULT_THETA_MIN,
            theta_max: 1.0,
            lambda: None,
            tuning: TuningOptions::default(),
            out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub fit: FitConfig,
    pub bootstrap: BootstrapOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub fit: PathBuf,
    pub curves: PathBuf,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn out_dir(&self) -> &PathBuf {
        match self {
            RunConfig::Fit(c) | RunConfig::Tune(c) => &c.out,
            RunConfig::Simulate(c) => &c.out,
            RunConfig::Bootstrap(c) => &c.fit.out,
            RunConfig::Predict(c) => &c.out,
        }
    }
}
