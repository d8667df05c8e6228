//! One Monte-Carlo trial: data → split → fit → privatize weights →
//! partially private estimate → privatize scalar, plus the theory report.
//!
//! The non-private part of a trial (data, split, model, τ̂) does not depend
//! on ε, so it is prepared once and evaluated for every ε in the grid.

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use crate::dataset::{split_dataset, Dataset, OutcomeBounds, PrivacyBudget};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_with_weights, fully_private_estimate, partially_private, EffectEstimate, Estimand, DEFAULT_TRIM,
};
use crate::ingest::{load_csv, normalize_unit_ball, resample, ResampleProtocol};
use crate::privacy::privatize_weights;
use crate::propensity::{train, PropensityModel};
use crate::rng::{stream_id, Purpose, RngStream};
use crate::synth::{generate, generate_with_coefficients, SynthCoefficients, SynthConfig};
use crate::theory::{
    bias_g_with_sigma, eta_deterministic, eta_deterministic_exp, eta_probabilistic, sensitivity_tau, SupportBound,
    TheoryInputs, TheoryReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStage {
    Load,
    Generate,
    Resample,
    Split,
    Train,
    Estimate,
    PrivatizeWeights,
    PartiallyPrivate,
    PrivatizeScalar,
    Theory,
}

impl std::fmt::Display for TrialStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_index: usize,
    pub stage: TrialStage,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignFlags {
    pub tau_n_nonpositive: bool,
    pub tau_n_eps_nonpositive: bool,
    pub joint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub tau_true: Option<f64>,
    pub epsilon: f64,
    pub m: usize,
    pub n: usize,
    pub c_y: f64,
    pub tau_hat: f64,
    pub tau_n: f64,
    pub tau_n_eps: f64,
    pub sign_flags: SignFlags,
    /// sgn(τ̂ₙ) ≠ sgn(τ̂)
    pub flip_n: bool,
    /// sgn(τ̂ₙᵋ) ≠ sgn(τ̂)
    pub flip_n_eps: bool,
    pub model_converged: bool,
    pub theory: TheoryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    Completed(Box<TrialRecord>),
    Failed(TrialFailure),
}

impl TrialOutcome {
    pub fn record(&self) -> Option<&TrialRecord> {
        match self {
            TrialOutcome::Completed(r) => Some(r),
            TrialOutcome::Failed(_) => None,
        }
    }
}

/// Data shared by all trials: loaded CSV realizations or frozen synthetic
/// coefficients.
#[derive(Debug, Clone)]
pub enum SourceData {
    Synthetic {
        frozen: Option<SynthCoefficients>,
    },
    Csv {
        realizations: Vec<Dataset>,
        scale_factors: Vec<f64>,
        protocol: ResampleProtocol,
    },
}

impl SourceData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        match &config.source {
            DataSource::Synthetic(s) => Ok(SourceData::Synthetic {
                frozen: s.freeze_coefficients.then(|| {
                    SynthCoefficients::draw(s.d, &mut RngStream::new(config.seed, stream_id(0, Purpose::Coefficients)))
                }),
            }),
            DataSource::Csv(c) => {
                let table = load_csv(&c.path, &c.schema)?;
                let mut realizations = Vec::new();
                let mut scale_factors = Vec::new();
                for part in table.by_realization().values() {
                    let (data, factor) = normalize_unit_ball(part)?;
                    realizations.push(data);
                    scale_factors.push(factor);
                }
                Ok(SourceData::Csv {
                    realizations,
                    scale_factors,
                    protocol: c.protocol,
                })
            }
        }
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// The ε-independent part of a trial.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub trial_index: usize,
    pub tau_true: Option<f64>,
    pub m: usize,
    pub d_n: Dataset,
    pub model: PropensityModel,
    pub tau_hat: EffectEstimate,
    pub c_y: f64,
    pub bounds: OutcomeBounds,
}

/// Bound passed to the estimators: the trimming level for the ATE, the cap
/// on exp(±wᵀx) for ATT/ATC.
fn estimator_bound(config: &ExperimentConfig) -> Option<f64> {
    config.trim_xi.map(|xi| match config.estimand {
        Estimand::Ate => xi,
        Estimand::Att | Estimand::Atc => (1.0 - xi) / xi,
    })
}

pub fn prepare_trial(
    config: &ExperimentConfig,
    source: &SourceData,
    tau_true: Option<f64>,
    m: usize,
    trial_index: usize,
) -> std::result::Result<PreparedTrial, TrialFailure> {
    let fail = |stage: TrialStage| {
        move |e: Error| TrialFailure {
            trial_index,
            stage,
            message: e.to_string(),
        }
    };
    let trial = trial_index as u64;
    let seed = config.seed;
    let (d_m, d_n) = match (source, &config.source) {
        (SourceData::Synthetic { frozen }, DataSource::Synthetic(s)) => {
            let synth = SynthConfig {
                d: s.d,
                n_units: m + config.n_estimate,
                tau_true: tau_true.unwrap_or(0.0),
                cov_scale: s.cov_scale,
                noise_var: s.noise_var,
            };
            let mut stream = RngStream::for_trial(seed, trial, Purpose::Data);
            let sample = match frozen {
                Some(c) => generate_with_coefficients(&synth, c, &mut stream),
                None => generate(&synth, &mut stream),
            }
            .map_err(fail(TrialStage::Generate))?;
            let mut stream = RngStream::for_trial(seed, trial, Purpose::Split);
            let (d_m, d_n, _) =
                split_dataset(&sample.data, m, config.split_mode, &mut stream).map_err(fail(TrialStage::Split))?;
            (d_m, d_n)
        }
        (
            SourceData::Csv {
                realizations,
                protocol,
                ..
            },
            DataSource::Csv(_),
        ) => {
            let data = &realizations[trial_index % realizations.len()];
            let protocol = ResampleProtocol {
                fit_per_arm: m / 2,
                estimate_per_arm: config.n_estimate / 2,
                ..*protocol
            };
            let mut stream = RngStream::for_trial(seed, trial, Purpose::Resample);
            let r = resample(data, &protocol, &mut stream).map_err(fail(TrialStage::Resample))?;
            (r.fit, r.estimate)
        }
        _ => {
            return Err(TrialFailure {
                trial_index,
                stage: TrialStage::Load,
                message: "loaded data does not match the configured source".into(),
            })
        }
    };

    let model = train(&d_m, config.lambda, &config.train).map_err(fail(TrialStage::Train))?;
    let tau_hat = estimate_with_weights(config.estimand, &d_n, &model.weights, estimator_bound(config))
        .map_err(fail(TrialStage::Estimate))?;
    let c_y = config.c_y.unwrap_or_else(|| d_n.max_abs_outcome());
    let bounds =
        OutcomeBounds::for_trim(c_y, config.trim_xi.unwrap_or(DEFAULT_TRIM)).map_err(fail(TrialStage::Estimate))?;
    Ok(PreparedTrial {
        trial_index,
        tau_true,
        m,
        d_n,
        model,
        tau_hat,
        c_y,
        bounds,
    })
}

impl PreparedTrial {
    /// Privatizes and evaluates at one ε. Noise streams depend only on the
    /// trial index, so every ε reuses the same standard-normal draws.
    pub fn evaluate(&self, config: &ExperimentConfig, epsilon: f64) -> TrialOutcome {
        match self.evaluate_inner(config, epsilon) {
            Ok(r) => TrialOutcome::Completed(Box::new(r)),
            Err(f) => TrialOutcome::Failed(f),
        }
    }

    fn evaluate_inner(&self, config: &ExperimentConfig, epsilon: f64) -> std::result::Result<TrialRecord, TrialFailure> {
        let trial_index = self.trial_index;
        let fail = |stage: TrialStage| {
            move |e: Error| TrialFailure {
                trial_index,
                stage,
                message: e.to_string(),
            }
        };
        let trial = trial_index as u64;
        let budget = PrivacyBudget::new(epsilon, config.delta).map_err(fail(TrialStage::PrivatizeWeights))?;

        let mut stream = RngStream::for_trial(config.seed, trial, Purpose::WeightNoise);
        let pm = privatize_weights(&self.model, budget, &mut stream).map_err(fail(TrialStage::PrivatizeWeights))?;
        let bound = estimator_bound(config);
        let tau_n = partially_private(config.estimand, &self.d_n, &pm, bound).map_err(fail(TrialStage::PartiallyPrivate))?;
        let mut stream = RngStream::for_trial(config.seed, trial, Purpose::ScalarNoise);
        let tau_n_eps =
            fully_private_estimate(&tau_n, &self.bounds, budget, &mut stream).map_err(fail(TrialStage::PrivatizeScalar))?;

        let theory = self.theory(config, pm.mechanism.sigma, tau_n.value, &tau_n_eps).map_err(fail(TrialStage::Theory))?;

        let (th, tn, te) = (self.tau_hat.value, tau_n.value, tau_n_eps.value);
        Ok(TrialRecord {
            trial_index,
            tau_true: self.tau_true,
            epsilon,
            m: self.m,
            n: self.d_n.n_rows(),
            c_y: self.c_y,
            tau_hat: th,
            tau_n: tn,
            tau_n_eps: te,
            sign_flags: SignFlags {
                tau_n_nonpositive: tn <= 0.0,
                tau_n_eps_nonpositive: te <= 0.0,
                joint: tn <= 0.0 && te <= 0.0,
            },
            flip_n: sign(tn) != sign(th),
            flip_n_eps: sign(te) != sign(th),
            model_converged: self.model.converged,
            theory,
        })
    }

    fn theory(
        &self,
        config: &ExperimentConfig,
        sigma_m: f64,
        tau_n: f64,
        tau_n_eps: &EffectEstimate,
    ) -> Result<TheoryReport> {
        let g = bias_g_with_sigma(config.estimand, &self.d_n, &self.model.weights, sigma_m, config.sign_convention)?
            .without_terms();
        let eta: SupportBound = match (config.trim_xi, config.estimand) {
            (Some(xi), Estimand::Ate) => eta_deterministic(&self.bounds, xi)?,
            (Some(_), _) => eta_deterministic_exp(self.c_y, self.bounds.xi_exp)?,
            (None, e) => eta_probabilistic(e, &self.d_n, &self.model.weights, sigma_m, config.gamma)?,
        };
        TheoryReport::evaluate(TheoryInputs {
            g,
            eta,
            tau_hat: self.tau_hat.value,
            tau_n,
            sensitivity_tau: sensitivity_tau(&self.bounds, self.d_n.n_rows(), config.estimand)?,
            sigma_n: tau_n_eps.sigma_n.unwrap_or(0.0),
            markov_thresholds: &config.markov_thresholds,
        })
    }
}

/// Runs a single trial at one (τ, m, ε) cell.
pub fn run_trial(
    config: &ExperimentConfig,
    source: &SourceData,
    tau_true: Option<f64>,
    m: usize,
    epsilon: f64,
    trial_index: usize,
) -> TrialOutcome {
    match prepare_trial(config, source, tau_true, m, trial_index) {
        Ok(p) => p.evaluate(config, epsilon),
        Err(f) => TrialOutcome::Failed(f),
    }
}
