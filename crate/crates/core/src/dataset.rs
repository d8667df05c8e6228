//! Domain types shared across the pipeline: the observational dataset, the
//! privacy budget, the fit/estimate split and the outcome bounds used for
//! sensitivity calibration.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::rng::RngStream;

/// Slack allowed on the unit-ball check to absorb normalization rounding.
pub const UNIT_BALL_TOLERANCE: f64 = 1e-12;

/// Observational data: covariates inside the L2 unit ball, binary
/// treatments and real-valued outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    treatments: Vec<u8>,
    outcomes: Array1<f64>,
}

impl Dataset {
    pub fn new(covariates: Array2<f64>, treatments: Vec<u8>, outcomes: Array1<f64>) -> Result<Self> {
        let rows = covariates.nrows();
        if treatments.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: treatments.len(),
            });
        }
        if outcomes.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: outcomes.len(),
            });
        }
        if let Some(i) = treatments.iter().position(|&t| t > 1) {
            return Err(Error::InvalidData(format!(
                "treatment at row {i} is {}, expected 0 or 1",
                treatments[i]
            )));
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidData(format!("outcome at row {i} is not finite")));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates contain non-finite values".into()));
        }
        let check = unit_ball_check(&covariates);
        if !check.passed {
            let row = check.worst_row.unwrap_or(0);
            return Err(Error::OutsideUnitBall {
                row,
                norm: check.worst_norm,
            });
        }
        Ok(Self {
            covariates,
            treatments,
            outcomes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.treatments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatments.is_empty()
    }

    /// Covariate dimension d.
    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &Array1<f64> {
        &self.outcomes
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn treated(&self, i: usize) -> bool {
        self.treatments[i] == 1
    }

    pub fn n_treated(&self) -> usize {
        self.treatments.iter().filter(|&&t| t == 1).count()
    }

    /// Indices of rows in the given arm.
    pub fn arm_indices(&self, treated: bool) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.treated(i) == treated)
            .collect()
    }

    /// Largest |y| in the data.
    pub fn max_abs_outcome(&self) -> f64 {
        self.outcomes.iter().fold(0.0, |acc, y| acc.max(y.abs()))
    }

    /// Rows at `indices`, in that order. Repeated indices are allowed
    /// (sampling with replacement).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.select(Axis(0), indices),
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
        }
    }

    /// Same covariates and treatments with new outcomes. Used for scaling
    /// and for the degenerate all-zero-outcome configurations.
    pub fn with_outcomes(&self, outcomes: Array1<f64>) -> Result<Dataset> {
        Dataset::new(self.covariates.clone(), self.treatments.clone(), outcomes)
    }

    /// Row-wise concatenation; dimensions must agree.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let covariates = ndarray::concatenate(
            Axis(0),
            &[self.covariates.view(), other.covariates.view()],
        )
        .map_err(|e| Error::InvalidData(e.to_string()))?;
        let mut treatments = self.treatments.clone();
        treatments.extend_from_slice(&other.treatments);
        let outcomes = self.outcomes.iter().chain(other.outcomes.iter()).copied().collect();
        Ok(Dataset {
            covariates,
            treatments,
            outcomes,
        })
    }
}

/// (ε, δ) pair with both parameters in the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Budget(format!("epsilon = {epsilon} must lie in (0, 1)")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Budget(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Bounds assumed by the sensitivity analysis of the effect estimate.
///
/// `omega_lo`/`omega_hi` bound the propensity scores used in the ATE
/// denominators; `xi_exp` bounds exp(±wᵀx) for the ATT/ATC estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBounds {
    pub c_y: f64,
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub xi_exp: f64,
}

impl OutcomeBounds {
    pub fn new(c_y: f64, omega_lo: f64, omega_hi: f64, xi_exp: f64) -> Result<Self> {
        check_range("c_y", c_y, c_y >= 0.0 && c_y.is_finite(), "c_y >= 0")?;
        check_range("omega_lo", omega_lo, omega_lo > 0.0 && omega_lo < 1.0, "(0, 1)")?;
        check_range("omega_hi", omega_hi, omega_hi > 0.0 && omega_hi < 1.0, "(0, 1)")?;
        if omega_lo >= omega_hi {
            return Err(Error::Precondition(format!(
                "omega_lo = {omega_lo} must be below omega_hi = {omega_hi}"
            )));
        }
        check_range("xi_exp", xi_exp, xi_exp >= 1.0 && xi_exp.is_finite(), "xi_exp >= 1")?;
        Ok(Self {
            c_y,
            omega_lo,
            omega_hi,
            xi_exp,
        })
    }

    /// Bounds implied by trimming the propensity denominators at `xi`:
    /// scores effectively lie in [ξ, 1 − ξ] and exp(±wᵀx) ≤ (1 − ξ)/ξ.
    pub fn for_trim(c_y: f64, xi: f64) -> Result<Self> {
        check_range("xi", xi, xi > 0.0 && xi < 0.5, "(0, 0.5)")?;
        Self::new(c_y, xi, 1.0 - xi, (1.0 - xi) / xi)
    }
}

/// Index partition of a dataset into the propensity-fitting part D_m and
/// the estimation part D_n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub fit_indices: Vec<usize>,
    pub estimate_indices: Vec<usize>,
}

impl Split {
    pub fn m(&self) -> usize {
        self.fit_indices.len()
    }

    pub fn n(&self) -> usize {
        self.estimate_indices.len()
    }

    /// Puts the two parts back at their original row positions.
    pub fn reassemble(&self, fit: &Dataset, estimate: &Dataset) -> Result<Dataset> {
        let total = self.m() + self.n();
        if fit.n_rows() != self.m() || estimate.n_rows() != self.n() {
            return Err(Error::Precondition("parts do not match the split sizes".into()));
        }
        let mut order = vec![(usize::MAX, false, 0usize); total];
        for (k, &i) in self.fit_indices.iter().enumerate() {
            order[i] = (i, true, k);
        }
        for (k, &i) in self.estimate_indices.iter().enumerate() {
            order[i] = (i, false, k);
        }
        let dim = fit.dim();
        let mut covariates = Array2::zeros((total, dim));
        let mut treatments = Vec::with_capacity(total);
        let mut outcomes = Vec::with_capacity(total);
        for (row, &(orig, from_fit, k)) in order.iter().enumerate() {
            if orig == usize::MAX {
                return Err(Error::Precondition(format!("row {row} missing from split")));
            }
            let src = if from_fit { fit } else { estimate };
            covariates.row_mut(row).assign(&src.row(k));
            treatments.push(src.treatments[k]);
            outcomes.push(src.outcomes[k]);
        }
        Dataset::new(covariates, treatments, Array1::from(outcomes))
    }
}

/// How `split_dataset` draws the fitting subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Uniform random permutation, first m rows fit.
    #[default]
    Uniform,
    /// Each treatment arm contributes to D_m in proportion to its size.
    Stratified,
}

/// Randomly partitions `data` into D_m (m rows) and D_n (the rest).
pub fn split_dataset(
    data: &Dataset,
    m: usize,
    mode: SplitMode,
    stream: &mut RngStream,
) -> Result<(Dataset, Dataset, Split)> {
    let total = data.n_rows();
    if m < 1 || m >= total {
        return Err(Error::OutOfRange {
            name: "m",
            value: m as f64,
            expected: "1 <= m < number of rows",
        });
    }
    let split = match mode {
        SplitMode::Uniform => {
            let perm = stream.permutation(total);
            Split {
                fit_indices: perm[..m].to_vec(),
                estimate_indices: perm[m..].to_vec(),
            }
        }
        SplitMode::Stratified => {
            let treated = data.arm_indices(true);
            let control = data.arm_indices(false);
            let share = m as f64 * treated.len() as f64 / total as f64;
            let lo = m.saturating_sub(control.len());
            let hi = treated.len().min(m);
            let m_treated = (share.round() as usize).clamp(lo, hi);
            let m_control = m - m_treated;
            let mut fit = Vec::with_capacity(m);
            let mut estimate = Vec::with_capacity(total - m);
            for (arm, take) in [(treated, m_treated), (control, m_control)] {
                let perm = stream.permutation(arm.len());
                fit.extend(perm[..take].iter().map(|&k| arm[k]));
                estimate.extend(perm[take..].iter().map(|&k| arm[k]));
            }
            Split {
                fit_indices: fit,
                estimate_indices: estimate,
            }
        }
    };
    let fit = data.select(&split.fit_indices);
    let estimate = data.select(&split.estimate_indices);
    Ok((fit, estimate, split))
}

/// Outcome of the unit-ball diagnostic. `worst_row` is the row with the
/// largest norm (absent for an empty dataset).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBallCheck {
    pub passed: bool,
    pub worst_row: Option<usize>,
    pub worst_norm: f64,
}

pub fn validate_unit_ball(data: &Dataset) -> UnitBallCheck {
    unit_ball_check(&data.covariates)
}

pub(crate) fn unit_ball_check(covariates: &Array2<f64>) -> UnitBallCheck {
    let mut worst_row = None;
    let mut worst_norm = 0.0;
    for (i, row) in covariates.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if worst_row.is_none() || norm > worst_norm {
            worst_row = Some(i);
            worst_norm = norm;
        }
    }
    UnitBallCheck {
        passed: worst_norm <= 1.0 + UNIT_BALL_TOLERANCE,
        worst_row,
        worst_norm,
    }
}
