//! L2-regularized logistic regression for propensity scores, trained by
//! full-batch gradient descent.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_range, Error, Result};

/// Default regularization strength.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Probabilities inside the loss are clamped to [P_CLAMP, 1 − P_CLAMP].
const P_CLAMP: f64 = 1e-15;

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub m_train: usize,
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    pub gradient_norm: f64,
}

impl PropensityModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// π_w(x) for a single covariate row.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        score_row(&self.weights, x)
    }

    pub fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        scores(&self.weights, data)
    }
}

/// 1 / (1 + e^{−z}) without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln σ(z) = −ln(1 + e^{−z}), stable in both tails.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn check_dim(weights: &[f64], d: usize) -> Result<()> {
    if weights.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: weights.len(),
        });
    }
    Ok(())
}

pub fn score_row(weights: &[f64], x: ArrayView1<'_, f64>) -> Result<f64> {
    check_dim(weights, x.len())?;
    Ok(sigmoid(ArrayView1::from(weights).dot(&x)))
}

/// wᵀxᵢ for every row.
pub fn linear_predictor(weights: &[f64], data: &Dataset) -> Result<Array1<f64>> {
    check_dim(weights, data.dim())?;
    Ok(data.covariates().dot(&ArrayView1::from(weights)))
}

/// Unclamped propensity scores for every row.
pub fn scores(weights: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    Ok(linear_predictor(weights, data)?.iter().map(|&z| sigmoid(z)).collect())
}

/// Regularized cross-entropy J(w, D).
pub fn loss(weights: &[f64], data: &Dataset, lambda: f64) -> Result<f64> {
    check_range("lambda", lambda, lambda > 0.0, "lambda > 0")?;
    if data.is_empty() {
        return Err(Error::InvalidData("loss of an empty dataset".into()));
    }
    let z = linear_predictor(weights, data)?;
    Ok(loss_from_predictor(weights, &z, data.treatments(), lambda))
}

fn loss_from_predictor(weights: &[f64], z: &Array1<f64>, t: &[u8], lambda: f64) -> f64 {
    let lo = P_CLAMP.ln();
    let hi = (-P_CLAMP).ln_1p();
    let nll: f64 = z
        .iter()
        .zip(t)
        .map(|(&zi, &ti)| {
            if ti == 1 {
                -log_sigmoid(zi).clamp(lo, hi)
            } else {
                -log_sigmoid(-zi).clamp(lo, hi)
            }
        })
        .sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    nll / t.len() as f64 + 0.5 * lambda * sq
}

/// ∇J = (1/m) Σ (pᵢ − tᵢ) xᵢ + λ w.
pub fn gradient(weights: &[f64], data: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    check_range("lambda", lambda, lambda > 0.0, "lambda > 0")?;
    if data.is_empty() {
        return Err(Error::InvalidData("gradient of an empty dataset".into()));
    }
    let z = linear_predictor(weights, data)?;
    Ok(gradient_from_predictor(weights, &z, data, lambda).to_vec())
}

fn gradient_from_predictor(weights: &[f64], z: &Array1<f64>, data: &Dataset, lambda: f64) -> Array1<f64> {
    let m = data.n_rows() as f64;
    let resid: Array1<f64> = z
        .iter()
        .zip(data.treatments())
        .map(|(&zi, &ti)| sigmoid(zi) - f64::from(ti))
        .collect();
    let mut grad = data.covariates().t().dot(&resid) / m;
    grad.scaled_add(lambda, &ArrayView1::from(weights));
    grad
}

/// Minimizes J(w, D) by full-batch gradient descent from w = 0.
///
/// The step is capped at 1/(1/4 + λ), the inverse of the Hessian norm bound
/// for rows in the unit ball, so large λ cannot make the iteration diverge.
pub fn train(data: &Dataset, lambda: f64, opts: &TrainOptions) -> Result<PropensityModel> {
    check_range("lambda", lambda, lambda > 0.0 && lambda.is_finite(), "lambda > 0")?;
    check_range("learning_rate", opts.learning_rate, opts.learning_rate > 0.0, "> 0")?;
    check_range("tol", opts.tol, opts.tol >= 0.0, ">= 0")?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    let step = opts.learning_rate.min(1.0 / (0.25 + lambda));
    let mut w = Array1::<f64>::zeros(data.dim());
    let x = data.covariates();
    let mut iteration = 0;
    loop {
        let z = x.dot(&w);
        let ws = w.as_slice().expect("contiguous weights");
        let current = loss_from_predictor(ws, &z, data.treatments(), lambda);
        if !current.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        let grad = gradient_from_predictor(ws, &z, data, lambda);
        let gnorm = grad.dot(&grad).sqrt();
        let converged = gnorm <= opts.tol;
        if converged || iteration >= opts.max_iters {
            return Ok(PropensityModel {
                weights: w.to_vec(),
                lambda,
                m_train: data.n_rows(),
                converged,
                iterations: iteration,
                final_loss: current,
                gradient_norm: gnorm,
            });
        }
        w.scaled_add(-step, &grad);
        iteration += 1;
    }
}

/// L2-sensitivity bound 2/(mλ) of the regularized ERM minimizer.
pub fn erm_sensitivity(m: usize, lambda: f64) -> Result<f64> {
    check_range("m", m as f64, m >= 1, "m >= 1")?;
    check_range("lambda", lambda, lambda > 0.0, "lambda > 0")?;
    Ok(2.0 / (m as f64 * lambda))
}

/// Appends a constant 1/√2 coordinate and scales the original covariates by
/// 1/√2, so rows stay inside the unit ball and w gains an intercept.
pub fn with_intercept(data: &Dataset) -> Result<Dataset> {
    let (n, d) = data.covariates().dim();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut x = Array2::from_elem((n, d + 1), c);
    x.slice_mut(ndarray::s![.., ..d]).assign(&(data.covariates() * c));
    Dataset::new(x, data.treatments().to_vec(), data.outcomes().clone())
}
