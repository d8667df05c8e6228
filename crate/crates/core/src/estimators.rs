//! Inverse-probability-weighted effect estimators (ATE, ATT, ATC) at the
//! three privacy stages: non-private, private w.r.t. the fitting split, and
//! private w.r.t. all data.
//!
//! Both arm means are normalized by the total n, not by the arm sizes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, OutcomeBounds, PrivacyBudget};
use crate::error::{check_range, Error, Result};
use crate::privacy::{privatize_scalar, PrivateModel};
use crate::propensity::{linear_predictor, scores};
use crate::rng::RngStream;
use crate::theory::sensitivity_tau;

/// Default propensity trimming level used by the experiment pipeline.
pub const DEFAULT_TRIM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimand {
    #[default]
    Ate,
    Att,
    Atc,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ate => "ATE",
            Estimand::Att => "ATT",
            Estimand::Atc => "ATC",
        })
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "att" => Ok(Estimand::Att),
            "atc" => Ok(Estimand::Atc),
            other => Err(Error::Config(format!("unknown estimand '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NonPrivate,
    /// Propensity weights privatized; private w.r.t. D_m only.
    DpWrtDm,
    /// Additionally perturbed scalar; private w.r.t. D_m and D_n.
    DpWrtAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub stage: Stage,
    pub value: f64,
    pub mu1: Option<f64>,
    pub mu0: Option<f64>,
    pub n_used: usize,
    pub trim_xi: Option<f64>,
    pub sigma_n: Option<f64>,
}

impl EffectEstimate {
    fn from_means(estimand: Estimand, mu1: f64, mu0: f64, n: usize, trim_xi: Option<f64>) -> Result<Self> {
        let value = mu1 - mu0;
        if !value.is_finite() {
            return Err(Error::InvalidData(format!(
                "{estimand} estimate is not finite (mu1 = {mu1}, mu0 = {mu0})"
            )));
        }
        Ok(Self {
            estimand,
            stage: Stage::NonPrivate,
            value,
            mu1: Some(mu1),
            mu0: Some(mu0),
            n_used: n,
            trim_xi,
            sigma_n: None,
        })
    }

    fn at_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }
}

fn check_inputs(data: &Dataset, scores: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidData("no rows to estimate from".into()));
    }
    if scores.len() != data.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: data.n_rows(),
            actual: scores.len(),
        });
    }
    Ok(())
}

/// Horvitz–Thompson ATE: μ̂₁ − μ̂₀ with μ̂₁ = (1/n)Σ yᵢtᵢ/πᵢ and
/// μ̂₀ = (1/n)Σ yᵢ(1−tᵢ)/(1−πᵢ).
pub fn ipw_ate(data: &Dataset, scores: &[f64]) -> Result<EffectEstimate> {
    check_inputs(data, scores)?;
    if let Some((row, &score)) = scores
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > 0.0 && p < 1.0))
    {
        return Err(Error::Positivity { row, score });
    }
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&p, &y)) in scores.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            s1 += y / p;
        } else {
            s0 += y / (1.0 - p);
        }
    }
    EffectEstimate::from_means(Estimand::Ate, s1 / n as f64, s0 / n as f64, n, None)
}

/// ATE with denominators floored at ξ: max{ξ, π} and max{ξ, 1 − π}.
pub fn ipw_ate_trimmed(data: &Dataset, scores: &[f64], xi: f64) -> Result<EffectEstimate> {
    check_range("xi", xi, xi > 0.0 && xi < 1.0, "(0, 1)")?;
    check_inputs(data, scores)?;
    if let Some((row, &score)) = scores
        .iter()
        .enumerate()
        .find(|(_, &p)| !(0.0..=1.0).contains(&p))
    {
        return Err(Error::Positivity { row, score });
    }
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&p, &y)) in scores.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            s1 += y / xi.max(p);
        } else {
            s0 += y / xi.max(1.0 - p);
        }
    }
    EffectEstimate::from_means(Estimand::Ate, s1 / n as f64, s0 / n as f64, n, Some(xi))
}

fn clamp_exp(z: f64, cap: Option<f64>) -> f64 {
    let e = z.exp();
    cap.map_or(e, |c| e.min(c))
}

fn check_cap(cap: Option<f64>) -> Result<()> {
    if let Some(c) = cap {
        check_range("xi_exp", c, c > 0.0 && c.is_finite(), "finite and > 0")?;
    }
    Ok(())
}

/// ATT in the logistic form (1/n)Σ (tᵢ − (1−tᵢ)·exp(wᵀxᵢ)) yᵢ.
/// With `xi_exp`, exp(wᵀxᵢ) is capped at that value.
pub fn ipw_att(data: &Dataset, weights: &[f64], xi_exp: Option<f64>) -> Result<EffectEstimate> {
    check_cap(xi_exp)?;
    let z = linear_predictor(weights, data)?;
    check_inputs(data, z.as_slice().unwrap_or(&[]))?;
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&zi, &y)) in z.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            s1 += y;
        } else {
            s0 += clamp_exp(zi, xi_exp) * y;
        }
    }
    EffectEstimate::from_means(Estimand::Att, s1 / n as f64, s0 / n as f64, n, xi_exp)
}

/// ATC in the logistic form (1/n)Σ (tᵢ·exp(−wᵀxᵢ) − (1−tᵢ)) yᵢ.
pub fn ipw_atc(data: &Dataset, weights: &[f64], xi_exp: Option<f64>) -> Result<EffectEstimate> {
    check_cap(xi_exp)?;
    let z = linear_predictor(weights, data)?;
    check_inputs(data, z.as_slice().unwrap_or(&[]))?;
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&zi, &y)) in z.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            s1 += clamp_exp(-zi, xi_exp) * y;
        } else {
            s0 += y;
        }
    }
    EffectEstimate::from_means(Estimand::Atc, s1 / n as f64, s0 / n as f64, n, xi_exp)
}

/// ATT from generic scores through the odds π/(1−π).
pub fn ipw_att_from_scores(data: &Dataset, scores: &[f64]) -> Result<EffectEstimate> {
    check_inputs(data, scores)?;
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&p, &y)) in scores.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            s1 += y;
        } else {
            if p >= 1.0 {
                return Err(Error::Positivity { row: i, score: p });
            }
            s0 += p / (1.0 - p) * y;
        }
    }
    EffectEstimate::from_means(Estimand::Att, s1 / n as f64, s0 / n as f64, n, None)
}

/// ATC from generic scores through the odds (1−π)/π.
pub fn ipw_atc_from_scores(data: &Dataset, scores: &[f64]) -> Result<EffectEstimate> {
    check_inputs(data, scores)?;
    let n = data.n_rows();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, (&p, &y)) in scores.iter().zip(data.outcomes()).enumerate() {
        if data.treated(i) {
            if p <= 0.0 {
                return Err(Error::Positivity { row: i, score: p });
            }
            s1 += (1.0 - p) / p * y;
        } else {
            s0 += y;
        }
    }
    EffectEstimate::from_means(Estimand::Atc, s1 / n as f64, s0 / n as f64, n, None)
}

/// Non-private estimate from model weights.
///
/// `bound` is the trimming level ξ for the ATE and the cap on exp(±wᵀx) for
/// ATT/ATC; `None` gives the plain estimator.
pub fn estimate_with_weights(
    estimand: Estimand,
    data: &Dataset,
    weights: &[f64],
    bound: Option<f64>,
) -> Result<EffectEstimate> {
    match estimand {
        Estimand::Ate => {
            let s = scores(weights, data)?;
            match bound {
                Some(xi) => ipw_ate_trimmed(data, &s, xi),
                None => ipw_ate(data, &s),
            }
        }
        Estimand::Att => ipw_att(data, weights, bound),
        Estimand::Atc => ipw_atc(data, weights, bound),
    }
}

/// τ̂ₙ: the estimate on D_n using the privatized propensity weights.
pub fn partially_private(
    estimand: Estimand,
    d_n: &Dataset,
    pm: &PrivateModel,
    bound: Option<f64>,
) -> Result<EffectEstimate> {
    Ok(estimate_with_weights(estimand, d_n, &pm.noisy_weights, bound)?.at_stage(Stage::DpWrtDm))
}

pub fn partially_private_ate(d_n: &Dataset, pm: &PrivateModel, trim: Option<f64>) -> Result<EffectEstimate> {
    partially_private(Estimand::Ate, d_n, pm, trim)
}

pub fn partially_private_att(d_n: &Dataset, pm: &PrivateModel, xi_exp: Option<f64>) -> Result<EffectEstimate> {
    partially_private(Estimand::Att, d_n, pm, xi_exp)
}

pub fn partially_private_atc(d_n: &Dataset, pm: &PrivateModel, xi_exp: Option<f64>) -> Result<EffectEstimate> {
    partially_private(Estimand::Atc, d_n, pm, xi_exp)
}

/// τ̂ₙᵋ = τ̂ₙ + e, with e calibrated to the sensitivity of the estimator
/// under `bounds`.
pub fn fully_private_estimate(
    est: &EffectEstimate,
    bounds: &OutcomeBounds,
    budget: PrivacyBudget,
    stream: &mut RngStream,
) -> Result<EffectEstimate> {
    if est.stage != Stage::DpWrtDm {
        return Err(Error::Precondition(format!(
            "fully private estimate needs a dp_wrt_dm input, got {:?}",
            est.stage
        )));
    }
    let sensitivity = sensitivity_tau(bounds, est.n_used, est.estimand)?;
    let (value, sigma) = privatize_scalar(est.value, sensitivity, budget, stream)?;
    Ok(EffectEstimate {
        estimand: est.estimand,
        stage: Stage::DpWrtAll,
        value,
        mu1: None,
        mu0: None,
        n_used: est.n_used,
        trim_xi: est.trim_xi,
        sigma_n: Some(sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::{calibrate, perturb_weights};
    use crate::propensity::PropensityModel;
    use ndarray::{array, Array1, Array2};

    fn data(x: Array2<f64>, t: Vec<u8>, y: Vec<f64>) -> Dataset {
        Dataset::new(x, t, Array1::from(y)).unwrap()
    }

    fn model(weights: Vec<f64>) -> PropensityModel {
        PropensityModel {
            weights,
            lambda: 0.1,
            m_train: 100,
            converged: true,
            iterations: 0,
            final_loss: 0.0,
            gradient_norm: 0.0,
        }
    }

    #[test]
    fn ate_examples() {
        let d = data(Array2::zeros((2, 1)), vec![1, 0], vec![1.0, 1.0]);
        let est = ipw_ate(&d, &[0.5, 0.5]).unwrap();
        assert_eq!((est.mu1, est.mu0, est.value), (Some(1.0), Some(1.0), 0.0));

        let zeros = data(Array2::zeros((3, 1)), vec![1, 0, 1], vec![0.0; 3]);
        assert_eq!(ipw_ate(&zeros, &[0.2, 0.7, 0.9]).unwrap().value, 0.0);

        let single = data(Array2::zeros((1, 1)), vec![1], vec![2.0]);
        let est = ipw_ate(&single, &[0.25]).unwrap();
        assert_eq!((est.mu1, est.mu0, est.value), (Some(8.0), Some(0.0), 8.0));
    }

    #[test]
    fn ate_positivity_errors() {
        let d = data(Array2::zeros((2, 1)), vec![1, 0], vec![1.0, 1.0]);
        assert!(matches!(ipw_ate(&d, &[0.5, 1.0]), Err(Error::Positivity { row: 1, .. })));
        assert!(matches!(ipw_ate(&d, &[0.0, 0.5]), Err(Error::Positivity { row: 0, .. })));
        assert!(matches!(ipw_ate(&d, &[0.5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trimmed_examples() {
        let single = data(Array2::zeros((1, 1)), vec![1], vec![1.0]);
        let est = ipw_ate_trimmed(&single, &[0.05], 0.1).unwrap();
        assert!((est.value - 10.0).abs() < 1e-12);
        assert_eq!(est.trim_xi, Some(0.1));

        // Trimming is a no-op when ξ sits below every score and complement.
        let d = data(Array2::zeros((3, 1)), vec![1, 0, 1], vec![1.5, -0.5, 2.0]);
        let s = [0.3, 0.6, 0.8];
        assert_eq!(
            ipw_ate_trimmed(&d, &s, 0.1).unwrap().value,
            ipw_ate(&d, &s).unwrap().value
        );
        // Scores of exactly 0 or 1 are fine once trimmed.
        assert!(ipw_ate_trimmed(&d, &[0.0, 1.0, 1.0], 0.1).is_ok());
        assert!(ipw_ate_trimmed(&d, &s, 0.0).is_err());
    }

    #[test]
    fn att_atc_examples() {
        let x = array![[0.0], [0.0]];
        let d = data(x, vec![1, 0], vec![1.0, 1.0]);
        assert_eq!(ipw_att(&d, &[0.0], None).unwrap().value, 0.0);
        assert_eq!(ipw_atc(&d, &[0.0], None).unwrap().value, 0.0);

        let treated = data(array![[0.3], [-0.2], [0.5]], vec![1, 1, 1], vec![1.0, 2.0, 4.5]);
        assert!((ipw_att(&treated, &[0.7], None).unwrap().value - 2.5).abs() < 1e-15);
        let control = data(array![[0.3], [-0.2], [0.5]], vec![0, 0, 0], vec![1.0, 2.0, 4.5]);
        assert!((ipw_atc(&control, &[0.7], None).unwrap().value + 2.5).abs() < 1e-15);

        // wᵀx = ln 2 on a single unit.
        let ln2 = std::f64::consts::LN_2;
        let c = data(array![[1.0]], vec![0], vec![1.0]);
        assert!((ipw_att(&c, &[ln2], None).unwrap().value + 2.0).abs() < 1e-12);
        let t = data(array![[1.0]], vec![1], vec![1.0]);
        assert!((ipw_atc(&t, &[ln2], None).unwrap().value - 0.5).abs() < 1e-12);

        // cap on exp(wᵀx)
        assert!((ipw_att(&c, &[ln2], Some(1.5)).unwrap().value + 1.5).abs() < 1e-12);
        assert!(ipw_att(&c, &[ln2, 0.0], None).is_err());
    }

    #[test]
    fn odds_form_matches_logistic_form() {
        let x = array![[0.3, -0.4], [0.1, 0.2], [-0.6, 0.5], [0.7, 0.1]];
        let d = data(x, vec![1, 0, 0, 1], vec![1.3, -0.2, 2.5, 0.4]);
        let w = [1.2, -0.8];
        let s = scores(&w, &d).unwrap();
        let a = ipw_att(&d, &w, None).unwrap().value;
        let b = ipw_att_from_scores(&d, &s).unwrap().value;
        assert!((a - b).abs() < 1e-12);
        let a = ipw_atc(&d, &w, None).unwrap().value;
        let b = ipw_atc_from_scores(&d, &s).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn partially_private_with_zero_noise_equals_non_private() {
        let x = array![[0.3, -0.4], [0.1, 0.2], [-0.6, 0.5]];
        let d = data(x, vec![1, 0, 1], vec![1.3, -0.2, 2.5]);
        let base = model(vec![0.5, 0.25]);
        let budget = PrivacyBudget::new(0.5, 1e-6).unwrap();
        let pm = perturb_weights(&base, calibrate(0.0, budget).unwrap(), &mut RngStream::new(1, 1));
        let pp = partially_private_ate(&d, &pm, None).unwrap();
        let np = ipw_ate(&d, &base.scores(&d).unwrap()).unwrap();
        assert_eq!(pp.value, np.value);
        assert_eq!(pp.stage, Stage::DpWrtDm);
        assert_eq!(partially_private_att(&d, &pm, None).unwrap().value, ipw_att(&d, &base.weights, None).unwrap().value);
        assert_eq!(partially_private_atc(&d, &pm, None).unwrap().value, ipw_atc(&d, &base.weights, None).unwrap().value);
    }

    #[test]
    fn trimmed_partial_estimate_is_bounded_under_large_noise() {
        let x = array![[0.9, 0.1], [-0.8, 0.3], [0.2, -0.95], [0.0, 0.5]];
        let d = data(x, vec![1, 0, 1, 0], vec![1.0, -1.0, 0.7, 0.9]);
        let base = model(vec![0.0, 0.0]);
        let budget = PrivacyBudget::new(0.1, 1e-6).unwrap();
        let mech = calibrate(50.0, budget).unwrap();
        let mut s = RngStream::new(3, 3);
        for _ in 0..200 {
            let pm = perturb_weights(&base, mech, &mut s);
            let est = partially_private_ate(&d, &pm, Some(0.05)).unwrap();
            assert!(est.value.abs() <= 2.0 * 1.0 / 0.05);
        }
    }

    #[test]
    fn fully_private_bookkeeping() {
        let d = data(Array2::zeros((4, 1)), vec![1, 0, 1, 0], vec![1.0, 0.5, 0.2, 0.1]);
        let base = model(vec![0.0]);
        let budget = PrivacyBudget::new(0.5, 1e-6).unwrap();
        let pm = perturb_weights(&base, calibrate(0.0, budget).unwrap(), &mut RngStream::new(1, 1));
        let partial = partially_private_ate(&d, &pm, Some(0.1)).unwrap();
        let bounds = OutcomeBounds::for_trim(1.0, 0.1).unwrap();
        let full = fully_private_estimate(&partial, &bounds, budget, &mut RngStream::new(1, 2)).unwrap();
        let expected = calibrate(sensitivity_tau(&bounds, 4, Estimand::Ate).unwrap(), budget).unwrap().sigma;
        assert_eq!(full.sigma_n, Some(expected));
        assert_eq!(full.stage, Stage::DpWrtAll);

        let zero = OutcomeBounds::for_trim(0.0, 0.1).unwrap();
        let same = fully_private_estimate(&partial, &zero, budget, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(same.value, partial.value);

        let np = ipw_ate(&d, &[0.5; 4]).unwrap();
        assert!(fully_private_estimate(&np, &bounds, budget, &mut RngStream::new(1, 2)).is_err());
    }

    #[test]
    fn fully_private_mean_matches_input() {
        let d = data(Array2::zeros((10, 1)), vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0], vec![1.0; 10]);
        let budget = PrivacyBudget::new(0.5, 1e-6).unwrap();
        let pm = perturb_weights(&model(vec![0.0]), calibrate(0.0, budget).unwrap(), &mut RngStream::new(1, 1));
        let partial = partially_private_ate(&d, &pm, None).unwrap();
        let bounds = OutcomeBounds::new(1.0, 0.1, 0.9, 1.0).unwrap();
        let mut s = RngStream::new(9, 9);
        let n = 100_000;
        let mut sigma = 0.0;
        let mean = (0..n)
            .map(|_| {
                let f = fully_private_estimate(&partial, &bounds, budget, &mut s).unwrap();
                sigma = f.sigma_n.unwrap();
                f.value
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - partial.value).abs() < 3.0 * sigma / (n as f64).sqrt());
    }
}
