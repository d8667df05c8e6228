use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitMode;
use crate::error::{Error, Result};
use crate::estimators::Estimand;
use crate::ingest::{CsvSchema, ResampleProtocol};
use crate::privacy::DEFAULT_DELTA;
use crate::propensity::{TrainOptions, DEFAULT_LAMBDA};
use crate::rng::DEFAULT_SEED;
use crate::theory::SignConvention;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSource::default())
    }
}

/// Per-trial synthetic data: m + n_estimate units, split at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    pub d: usize,
    pub cov_scale: f64,
    pub noise_var: f64,
    /// Draw a and b once for the whole experiment instead of per trial.
    pub freeze_coefficients: bool,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            d: 50,
            cov_scale: 9.0,
            noise_var: 0.01,
            freeze_coefficients: false,
        }
    }
}

/// A CSV table resampled per trial. Each m in the grid sets the D_m size
/// (m/2 per arm) and `n_estimate` the D_n size (n/2 per arm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
    pub protocol: ResampleProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub trials: usize,
    pub epsilon_grid: Vec<f64>,
    pub m_grid: Vec<usize>,
    pub n_estimate: usize,
    /// True effects to sweep (synthetic only; ignored for CSV sources).
    pub tau_grid: Vec<f64>,
    pub trim_xi: Option<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub estimand: Estimand,
    /// Outcome bound C_y; defaults to max |y| over D_n in each trial.
    pub c_y: Option<f64>,
    pub split_mode: SplitMode,
    pub sign_convention: SignConvention,
    /// Confidence slack γ for the probabilistic support bound, used when
    /// no trimming is configured.
    pub gamma: f64,
    pub markov_thresholds: Vec<f64>,
    pub train: TrainOptions,
    /// Keep every trial record in the report.
    pub keep_trials: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            trials: 100,
            epsilon_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99],
            m_grid: vec![500, 1000, 1500, 2000, 2500],
            n_estimate: 1000,
            tau_grid: vec![0.1, 2.0],
            trim_xi: None,
            delta: DEFAULT_DELTA,
            lambda: DEFAULT_LAMBDA,
            seed: DEFAULT_SEED,
            estimand: Estimand::Ate,
            c_y: None,
            split_mode: SplitMode::Uniform,
            sign_convention: SignConvention::AppendixProof,
            gamma: 0.05,
            markov_thresholds: vec![0.1, 0.5, 1.0],
            train: TrainOptions::default(),
            keep_trials: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.epsilon_grid.is_empty() || self.m_grid.is_empty() {
            return fail("epsilon_grid and m_grid must be non-empty".into());
        }
        if let Some(e) = self.epsilon_grid.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return fail(format!("epsilon {e} is outside (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta {} is outside (0, 1)", self.delta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be positive", self.lambda));
        }
        if self.m_grid.contains(&0) || self.n_estimate == 0 {
            return fail("m and n_estimate must be at least 1".into());
        }
        if let Some(xi) = self.trim_xi {
            if !(xi > 0.0 && xi < 0.5) {
                return fail(format!("trim_xi {xi} is outside (0, 0.5)"));
            }
        }
        if let Some(c) = self.c_y {
            if !(c >= 0.0 && c.is_finite()) {
                return fail(format!("c_y {c} must be finite and >= 0"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma {} is outside (0, 1)", self.gamma));
        }
        if let Some(t) = self.markov_thresholds.iter().find(|t| !(**t > 0.0)) {
            return fail(format!("markov threshold {t} must be positive"));
        }
        match &self.source {
            DataSource::Synthetic(s) => {
                if self.tau_grid.is_empty() {
                    return fail("tau_grid must be non-empty for synthetic data".into());
                }
                if let Some(t) = self.tau_grid.iter().find(|t| !t.is_finite()) {
                    return fail(format!("tau {t} is not finite"));
                }
                if s.d == 0 || !(s.cov_scale > 0.0) || !(s.noise_var >= 0.0) {
                    return fail("synthetic source needs d >= 1, cov_scale > 0, noise_var >= 0".into());
                }
            }
            DataSource::Csv(c) => {
                c.schema.validate()?;
                c.protocol.validate()?;
                if self.m_grid.iter().any(|m| m % 2 == 1) || self.n_estimate % 2 == 1 {
                    return fail("CSV sources draw balanced arms, so m and n_estimate must be even".into());
                }
            }
        }
        Ok(())
    }

    /// The τ values swept: the configured grid for synthetic data, a single
    /// unknown effect for CSV data.
    pub fn taus(&self) -> Vec<Option<f64>> {
        match self.source {
            DataSource::Synthetic(_) => self.tau_grid.iter().copied().map(Some).collect(),
            DataSource::Csv(_) => vec![None],
        }
    }
}
