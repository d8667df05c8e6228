//! Synthetic observational data with a known treatment effect.
//!
//! xᵢ ~ N(0, s·I_d) scaled into the unit ball by the largest row norm,
//! tᵢ ~ Bernoulli(σ(aᵀxᵢ)), yᵢ = bᵀxᵢ + τ·tᵢ + ϑᵢ with ϑᵢ ~ N(0, v).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_range, Error, Result};
use crate::propensity::sigmoid;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub d: usize,
    pub n_units: usize,
    pub tau_true: f64,
    pub cov_scale: f64,
    pub noise_var: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 50,
            n_units: 1000,
            tau_true: 2.0,
            cov_scale: 9.0,
            noise_var: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("d", self.d as f64, self.d >= 1, "d >= 1")?;
        check_range("n_units", self.n_units as f64, self.n_units >= 2, "n_units >= 2")?;
        check_range("tau_true", self.tau_true, self.tau_true.is_finite(), "finite")?;
        check_range("cov_scale", self.cov_scale, self.cov_scale > 0.0 && self.cov_scale.is_finite(), "> 0")?;
        check_range("noise_var", self.noise_var, self.noise_var >= 0.0 && self.noise_var.is_finite(), ">= 0")?;
        Ok(())
    }
}

/// Treatment (a) and outcome (b) coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SynthCoefficients {
    pub fn draw(d: usize, stream: &mut RngStream) -> Self {
        let a = stream.standard_normal_vector(d);
        let b = stream.standard_normal_vector(d);
        Self { a, b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub data: Dataset,
    pub tau_true: f64,
    pub coefficients: SynthCoefficients,
    /// The largest raw row norm, which every row was divided by.
    pub scale_factor: f64,
}

/// Draws a dataset with fresh coefficients. Draw order on the stream:
/// covariates, a, b, treatments, outcome noise.
pub fn generate(config: &SynthConfig, stream: &mut RngStream) -> Result<SynthSample> {
    generate_inner(config, None, stream)
}

/// Like [`generate`] but with fixed coefficients (nothing is drawn for them).
pub fn generate_with_coefficients(
    config: &SynthConfig,
    coefficients: &SynthCoefficients,
    stream: &mut RngStream,
) -> Result<SynthSample> {
    generate_inner(config, Some(coefficients), stream)
}

fn generate_inner(
    config: &SynthConfig,
    fixed: Option<&SynthCoefficients>,
    stream: &mut RngStream,
) -> Result<SynthSample> {
    config.validate()?;
    let (n, d) = (config.n_units, config.d);
    if let Some(c) = fixed {
        if c.a.len() != d || c.b.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: if c.a.len() != d { c.a.len() } else { c.b.len() },
            });
        }
    }

    let sd = config.cov_scale.sqrt();
    let mut x = Array2::from_shape_vec((n, d), stream.standard_normal_vector(n * d))
        .expect("shape matches draw count");
    x.mapv_inplace(|v| v * sd);
    let scale_factor = x
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    if scale_factor > 0.0 {
        x.mapv_inplace(|v| v / scale_factor);
    }

    let coefficients = match fixed {
        Some(c) => c.clone(),
        None => SynthCoefficients::draw(d, stream),
    };
    let a = Array1::from(coefficients.a.clone());
    let b = Array1::from(coefficients.b.clone());

    let treatments = x
        .dot(&a)
        .iter()
        .map(|&z| stream.bernoulli(sigmoid(z)).map(u8::from))
        .collect::<Result<Vec<u8>>>()?;
    let noise_sd = config.noise_var.sqrt();
    let mut y = x.dot(&b);
    for (yi, &t) in y.iter_mut().zip(&treatments) {
        *yi += f64::from(t) * config.tau_true + noise_sd * stream.standard_normal();
    }

    Ok(SynthSample {
        data: Dataset::new(x, treatments, y)?,
        tau_true: config.tau_true,
        coefficients,
        scale_factor,
    })
}
