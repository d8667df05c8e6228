//! Gaussian mechanism: noise calibration and output perturbation of the
//! propensity weights and of the scalar effect estimate.
//!
//! Noise is drawn from a seeded ChaCha stream. That is fine for studying
//! utility, but it is not a hardened release mechanism.

use serde::{Deserialize, Serialize};

use crate::dataset::PrivacyBudget;
use crate::error::{check_range, Result};
use crate::propensity::{erm_sensitivity, PropensityModel};
use crate::rng::RngStream;

/// Default failure probability δ.
pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanism {
    pub sensitivity: f64,
    pub budget: PrivacyBudget,
    pub sigma: f64,
}

/// √(2 ln(1.25/δ)) / ε, the noise multiplier per unit of sensitivity.
pub fn noise_multiplier(budget: &PrivacyBudget) -> f64 {
    (2.0 * (1.25 / budget.delta()).ln()).sqrt() / budget.epsilon()
}

/// Smallest σ for which adding N(0, σ²) to a query of the given
/// L2-sensitivity is (ε, δ)-DP: σ = S·√(2 ln(1.25/δ))/ε.
pub fn calibrate(sensitivity: f64, budget: PrivacyBudget) -> Result<GaussianMechanism> {
    check_range(
        "sensitivity",
        sensitivity,
        sensitivity >= 0.0 && sensitivity.is_finite(),
        "finite and >= 0",
    )?;
    Ok(GaussianMechanism {
        sensitivity,
        budget,
        sigma: sensitivity * noise_multiplier(&budget),
    })
}

/// Propensity model whose weights were perturbed with Gaussian noise.
///
/// Holds the non-private base model, so it must not be exported as is; use
/// [`PrivateModel::release`] for anything that leaves the process.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateModel {
    pub base: PropensityModel,
    pub noisy_weights: Vec<f64>,
    pub mechanism: GaussianMechanism,
}

impl PrivateModel {
    /// The noise vector z = ŵ_ε − ŵ. Diagnostic only.
    pub fn noise_draw(&self) -> Vec<f64> {
        self.noisy_weights
            .iter()
            .zip(&self.base.weights)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn release(&self) -> ReleasedModel {
        ReleasedModel {
            weights: self.noisy_weights.clone(),
            sigma: self.mechanism.sigma,
            sensitivity: self.mechanism.sensitivity,
            epsilon: self.mechanism.budget.epsilon(),
            delta: self.mechanism.budget.delta(),
            lambda: self.base.lambda,
            m_train: self.base.m_train,
        }
    }
}

/// The exportable part of a [`PrivateModel`]: noisy weights plus the
/// public calibration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleasedModel {
    pub weights: Vec<f64>,
    pub sigma: f64,
    pub sensitivity: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub lambda: f64,
    pub m_train: usize,
}

/// ŵ_ε = ŵ + z with z ~ N(0, σ_m² I_d), σ_m calibrated to 2/(mλ).
pub fn privatize_weights(
    model: &PropensityModel,
    budget: PrivacyBudget,
    stream: &mut RngStream,
) -> Result<PrivateModel> {
    let sensitivity = erm_sensitivity(model.m_train, model.lambda)?;
    let mechanism = calibrate(sensitivity, budget)?;
    Ok(perturb_weights(model, mechanism, stream))
}

/// Adds noise from an already calibrated mechanism.
pub fn perturb_weights(
    model: &PropensityModel,
    mechanism: GaussianMechanism,
    stream: &mut RngStream,
) -> PrivateModel {
    let noise = stream.standard_normal_vector(model.dim());
    let noisy_weights = model
        .weights
        .iter()
        .zip(&noise)
        .map(|(w, z)| w + mechanism.sigma * z)
        .collect();
    PrivateModel {
        base: model.clone(),
        noisy_weights,
        mechanism,
    }
}

/// value + e with e ~ N(0, σ²); returns the noisy value and σ.
pub fn privatize_scalar(
    value: f64,
    sensitivity: f64,
    budget: PrivacyBudget,
    stream: &mut RngStream,
) -> Result<(f64, f64)> {
    let sigma = calibrate(sensitivity, budget)?.sigma;
    Ok((value + sigma * stream.standard_normal(), sigma))
}
