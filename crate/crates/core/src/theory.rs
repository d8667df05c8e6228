//! Closed-form quantities describing how the privatization noise moves the
//! estimate: the expected bias g, support bounds η, the sensitivity of the
//! effect estimate and the sign-flip probability bounds.
//!
//! Every bound here applies to ATE, ATT and ATC alike; the estimand only
//! changes which α coefficients enter g and which sensitivity is used.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, OutcomeBounds, PrivacyBudget};
use crate::error::{check_range, Error, Result};
use crate::estimators::Estimand;
use crate::privacy::noise_multiplier;
use crate::propensity::{erm_sensitivity, linear_predictor, PropensityModel};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Which exponent to use for βᵢ in g.
///
/// `AppendixProof` uses βᵢ = exp(σ²‖xᵢ‖²/2), the Gaussian moment generating
/// function. `MainText` multiplies the exponent by (−1)^{tᵢ}, reproducing the
/// closed form as printed alongside the lemma statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    AppendixProof,
    MainText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub estimand: Estimand,
    pub g_value: f64,
    /// αᵢ(βᵢ − 1)/n per unit. Emptied by [`BiasReport::without_terms`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_unit_terms: Vec<f64>,
    pub sign_convention: SignConvention,
    /// Standard deviation of the weight noise the bias refers to.
    pub sigma: f64,
}

impl BiasReport {
    pub fn without_terms(mut self) -> Self {
        self.per_unit_terms = Vec::new();
        self
    }
}

/// σ of the weight noise for a model fit on m points:
/// 2√(2 ln(1.25/δ)) / (εmλ).
pub fn weight_noise_sigma(budget: &PrivacyBudget, m: usize, lambda: f64) -> Result<f64> {
    Ok(erm_sensitivity(m, lambda)? * noise_multiplier(budget))
}

/// αᵢ for the given estimand.
fn alpha(estimand: Estimand, treated: bool, y: f64, z: f64) -> f64 {
    match (estimand, treated) {
        (Estimand::Ate, true) | (Estimand::Atc, true) => y * (-z).exp(),
        (Estimand::Ate, false) | (Estimand::Att, false) => -y * z.exp(),
        (Estimand::Att, true) | (Estimand::Atc, false) => 0.0,
    }
}

/// g = (1/n) Σ αᵢ(βᵢ − 1) for weight noise of standard deviation `sigma`.
pub fn bias_g_with_sigma(
    estimand: Estimand,
    d_n: &Dataset,
    weights: &[f64],
    sigma: f64,
    convention: SignConvention,
) -> Result<BiasReport> {
    check_range("sigma", sigma, sigma >= 0.0 && sigma.is_finite(), "finite and >= 0")?;
    if d_n.is_empty() {
        return Err(Error::InvalidData("bias of an empty dataset".into()));
    }
    let z = linear_predictor(weights, d_n)?;
    let n = d_n.n_rows() as f64;
    let half_var = 0.5 * sigma * sigma;
    let per_unit_terms: Vec<f64> = (0..d_n.n_rows())
        .map(|i| {
            let x = d_n.row(i);
            let treated = d_n.treated(i);
            let a = alpha(estimand, treated, d_n.outcomes()[i], z[i]);
            if a == 0.0 {
                return 0.0;
            }
            let mut exponent = half_var * x.dot(&x);
            if convention == SignConvention::MainText && treated {
                exponent = -exponent;
            }
            a * exponent.exp_m1() / n
        })
        .collect();
    Ok(BiasReport {
        estimand,
        g_value: per_unit_terms.iter().sum(),
        per_unit_terms,
        sign_convention: convention,
        sigma,
    })
}

/// Bias of the partially private ATE for a model fit on `m` points.
pub fn bias_g(
    d_n: &Dataset,
    model: &PropensityModel,
    budget: PrivacyBudget,
    m: usize,
    convention: SignConvention,
) -> Result<BiasReport> {
    let sigma = weight_noise_sigma(&budget, m, model.lambda)?;
    bias_g_with_sigma(Estimand::Ate, d_n, &model.weights, sigma, convention)
}

pub fn bias_g_att(
    d_n: &Dataset,
    model: &PropensityModel,
    budget: PrivacyBudget,
    m: usize,
    convention: SignConvention,
) -> Result<BiasReport> {
    let sigma = weight_noise_sigma(&budget, m, model.lambda)?;
    bias_g_with_sigma(Estimand::Att, d_n, &model.weights, sigma, convention)
}

pub fn bias_g_atc(
    d_n: &Dataset,
    model: &PropensityModel,
    budget: PrivacyBudget,
    m: usize,
    convention: SignConvention,
) -> Result<BiasReport> {
    let sigma = weight_noise_sigma(&budget, m, model.lambda)?;
    bias_g_with_sigma(Estimand::Atc, d_n, &model.weights, sigma, convention)
}

/// E[τ̂ₙ] = τ̂ + g.
pub fn lemma1_expectation(tau_hat: f64, g: &BiasReport) -> f64 {
    tau_hat + g.g_value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    DeterministicTrim,
    Probabilistic,
}

/// |τ̂ₙ| ≤ η, either surely (trimming) or with probability ≥ 1 − γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBound {
    pub eta: f64,
    pub kind: SupportKind,
    pub gamma: f64,
    pub zeta: Option<f64>,
}

/// η = 2C_y/ξ for the estimator with denominators floored at ξ.
pub fn eta_deterministic(bounds: &OutcomeBounds, xi: f64) -> Result<SupportBound> {
    check_range("xi", xi, xi > 0.0 && xi < 1.0, "(0, 1)")?;
    Ok(SupportBound {
        eta: 2.0 * bounds.c_y / xi,
        kind: SupportKind::DeterministicTrim,
        gamma: 0.0,
        zeta: None,
    })
}

/// η = C_y·max(1, ξ) for the ATT/ATC estimators with exp(±wᵀx) capped at ξ.
pub fn eta_deterministic_exp(c_y: f64, xi_exp: f64) -> Result<SupportBound> {
    check_range("c_y", c_y, c_y >= 0.0 && c_y.is_finite(), "c_y >= 0")?;
    check_range("xi_exp", xi_exp, xi_exp > 0.0 && xi_exp.is_finite(), "> 0")?;
    Ok(SupportBound {
        eta: c_y * xi_exp.max(1.0),
        kind: SupportKind::DeterministicTrim,
        gamma: 0.0,
        zeta: None,
    })
}

/// ζ with P(|Σⱼ zⱼ| ≥ ζ) ≤ γ under the sub-Gaussian tail
/// 2·exp(−ζ²/(2dσ²)): ζ = σ√(2d·ln(2/γ)).
pub fn chernoff_zeta(sigma: f64, d: usize, gamma: f64) -> Result<f64> {
    check_range("gamma", gamma, gamma > 0.0 && gamma < 1.0, "(0, 1)")?;
    check_range("sigma", sigma, sigma >= 0.0 && sigma.is_finite(), "finite and >= 0")?;
    Ok(sigma * (2.0 * d as f64 * (2.0 / gamma).ln()).sqrt())
}

/// Probabilistic support bound for the untrimmed estimator:
/// η = (2/n)·sinh(ζ)·(Σ_treated |yᵢ|e^{−wᵀxᵢ} + Σ_control |yᵢ|e^{wᵀxᵢ}),
/// valid with probability at least 1 − γ.
///
/// For ATT only the control sum enters (treated terms carry no noise), for
/// ATC only the treated sum.
pub fn eta_probabilistic(
    estimand: Estimand,
    d_n: &Dataset,
    weights: &[f64],
    sigma_m: f64,
    gamma: f64,
) -> Result<SupportBound> {
    let zeta = chernoff_zeta(sigma_m, d_n.dim(), gamma)?;
    if d_n.is_empty() {
        return Err(Error::InvalidData("support bound of an empty dataset".into()));
    }
    let z = linear_predictor(weights, d_n)?;
    let mut total = 0.0;
    for (i, (&zi, &y)) in z.iter().zip(d_n.outcomes()).enumerate() {
        let treated = d_n.treated(i);
        total += match (estimand, treated) {
            (Estimand::Ate | Estimand::Atc, true) => y.abs() * (-zi).exp(),
            (Estimand::Ate | Estimand::Att, false) => y.abs() * zi.exp(),
            _ => 0.0,
        };
    }
    Ok(SupportBound {
        eta: 2.0 / d_n.n_rows() as f64 * zeta.sinh() * total,
        kind: SupportKind::Probabilistic,
        gamma,
        zeta: Some(zeta),
    })
}

/// L2-sensitivity of the effect estimate on n points:
/// ATE 2C_y/n·max{1/Ω₁, 1/(1−Ω₂)}; ATT/ATC 2C_y/n·max{1, ξ}.
pub fn sensitivity_tau(bounds: &OutcomeBounds, n: usize, estimand: Estimand) -> Result<f64> {
    check_range("n", n as f64, n >= 1, "n >= 1")?;
    let base = 2.0 * bounds.c_y / n as f64;
    Ok(match estimand {
        Estimand::Ate => base * (1.0 / bounds.omega_lo).max(1.0 / (1.0 - bounds.omega_hi)),
        Estimand::Att | Estimand::Atc => base * bounds.xi_exp.max(1.0),
    })
}

/// A probability bound clamped to [0, 1], with the unclamped value kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBound {
    pub value: f64,
    pub raw: f64,
}

impl ProbabilityBound {
    fn new(raw: f64) -> Self {
        Self {
            value: raw.clamp(0.0, 1.0),
            raw,
        }
    }
}

fn check_theorem_inputs(tau_hat: f64, eta: f64) -> Result<()> {
    if !(tau_hat > 0.0) {
        return Err(Error::Precondition(format!(
            "sign-flip bounds assume a positive non-private estimate, got {tau_hat}"
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::Precondition(format!("support bound eta must be positive, got {eta}")));
    }
    Ok(())
}

/// P(τ̂ₙ ≤ 0 | τ̂ > 0) ≤ exp(−2(τ̂ + g)²/η²).
pub fn thm1_bound(tau_hat: f64, g: f64, eta: f64) -> Result<ProbabilityBound> {
    check_theorem_inputs(tau_hat, eta)?;
    let shifted = tau_hat + g;
    Ok(ProbabilityBound::new((-2.0 * shifted * shifted / (eta * eta)).exp()))
}

/// P(τ̂ₙᵋ ≤ 0, τ̂ₙ ≤ 0 | τ̂ > 0) ≤ ½·exp(−2(τ̂ + g)²/η²)·[1 + erf(|τ̂ₙ|/(σₙ√2))].
pub fn thm2_bound(tau_hat: f64, g: f64, eta: f64, tau_n: f64, sigma_n: f64) -> Result<ProbabilityBound> {
    let partial = thm1_bound(tau_hat, g, eta)?;
    let factor = flip_given_negative(tau_n, sigma_n)?;
    Ok(ProbabilityBound::new(partial.raw * factor))
}

/// P(τ̂ₙᵋ ≤ 0 | τ̂ₙ ≤ 0) = Φ(|τ̂ₙ|/σₙ).
pub fn flip_given_negative(tau_n: f64, sigma_n: f64) -> Result<f64> {
    if !(sigma_n > 0.0) {
        return Err(Error::Precondition(format!("sigma_n must be positive, got {sigma_n}")));
    }
    Ok(normal_cdf(tau_n.abs() / sigma_n))
}

/// P(|τ̂ₙ − τ̂| ≥ Δ) ≤ |g|/Δ.
pub fn markov_error_bound(g: f64, delta_threshold: f64) -> Result<ProbabilityBound> {
    check_range("delta_threshold", delta_threshold, delta_threshold > 0.0, "> 0")?;
    Ok(ProbabilityBound::new(g.abs() / delta_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovPoint {
    pub threshold: f64,
    pub bound: ProbabilityBound,
}

/// All theoretical quantities for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub estimand: Estimand,
    pub g: BiasReport,
    pub eta: SupportBound,
    pub sensitivity_tau: f64,
    pub sigma_n: f64,
    /// Absent when τ̂ ≤ 0 or η = 0 (the theorems do not apply).
    pub thm1_bound: Option<ProbabilityBound>,
    pub thm2_bound: Option<ProbabilityBound>,
    pub flip_given_negative: Option<f64>,
    pub markov: Vec<MarkovPoint>,
}

/// Inputs for [`TheoryReport::evaluate`].
#[derive(Debug, Clone)]
pub struct TheoryInputs<'a> {
    pub g: BiasReport,
    pub eta: SupportBound,
    pub tau_hat: f64,
    pub tau_n: f64,
    pub sensitivity_tau: f64,
    pub sigma_n: f64,
    pub markov_thresholds: &'a [f64],
}

impl TheoryReport {
    pub fn evaluate(inputs: TheoryInputs<'_>) -> Result<Self> {
        let TheoryInputs {
            g,
            eta,
            tau_hat,
            tau_n,
            sensitivity_tau,
            sigma_n,
            markov_thresholds,
        } = inputs;
        let thm1 = thm1_bound(tau_hat, g.g_value, eta.eta).ok();
        let flip = flip_given_negative(tau_n, sigma_n).ok();
        let thm2 = match (thm1, flip) {
            (Some(_), Some(_)) => thm2_bound(tau_hat, g.g_value, eta.eta, tau_n, sigma_n).ok(),
            // σₙ = 0: τ̂ₙᵋ = τ̂ₙ, so the joint event reduces to the first one.
            (Some(b), None) if sigma_n == 0.0 => Some(b),
            _ => None,
        };
        let markov = markov_thresholds
            .iter()
            .map(|&threshold| {
                Ok(MarkovPoint {
                    threshold,
                    bound: markov_error_bound(g.g_value, threshold)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            estimand: g.estimand,
            g,
            eta,
            sensitivity_tau,
            sigma_n,
            thm1_bound: thm1,
            thm2_bound: thm2,
            flip_given_negative: flip,
            markov,
        })
    }
}
