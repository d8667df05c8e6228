//! Grid sweeps over (τ, m, ε) with per-cell aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::trial::{prepare_trial, SourceData, TrialFailure, TrialOutcome, TrialRecord};
use crate::error::Result;

/// Share of failed trials above which a cell is flagged as degraded.
pub const DEGRADED_FAILURE_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Mean with a 95% half-width 1.96·s/√k (absent for fewer than 2 values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: Option<f64>,
    pub half_width: Option<f64>,
    pub count: usize,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: None,
                half_width: None,
                count,
            };
        }
        let k = count as f64;
        let mean = values.iter().sum::<f64>() / k;
        let half_width = (count >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            1.96 * var.sqrt() / k.sqrt()
        });
        Self {
            mean: Some(mean),
            half_width,
            count,
        }
    }

    fn of_flags(flags: impl Iterator<Item = bool>) -> Self {
        let v: Vec<f64> = flags.map(|b| if b { 1.0 } else { 0.0 }).collect();
        Self::of(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSummary {
    pub threshold: f64,
    pub mean_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub tau_true: Option<f64>,
    pub epsilon: f64,
    pub m: usize,
    pub trials: usize,
    pub completed: usize,
    pub failures: Vec<TrialFailure>,
    pub degraded: bool,
    pub tau_hat: MeanCi,
    pub tau_n: MeanCi,
    pub tau_n_eps: MeanCi,
    /// Fraction of trials with sgn(τ̂ₙ) ≠ sgn(τ̂).
    pub rho_n: MeanCi,
    /// Fraction of trials with sgn(τ̂ₙᵋ) ≠ sgn(τ̂).
    pub rho_n_eps: MeanCi,
    /// Fraction with τ̂ₙ ≤ 0 and τ̂ₙᵋ ≤ 0.
    pub joint_flip: MeanCi,
    /// Trials with τ̂ > 0, the subset the theorems speak about.
    pub positive_trials: usize,
    pub cond_tau_n_nonpositive: MeanCi,
    pub cond_joint: MeanCi,
    pub g: MeanCi,
    pub abs_g: MeanCi,
    pub eta: MeanCi,
    pub sensitivity_tau: MeanCi,
    pub sigma_n: MeanCi,
    /// Averaged over trials with τ̂ > 0 (where the theorems apply).
    pub thm1_bound: MeanCi,
    pub thm2_bound: MeanCi,
    pub flip_given_negative: MeanCi,
    pub markov: Vec<MarkovSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<TrialOutcome>>,
}

impl CellSummary {
    pub fn aggregate(
        tau_true: Option<f64>,
        epsilon: f64,
        m: usize,
        outcomes: Vec<TrialOutcome>,
        thresholds: &[f64],
        keep: bool,
    ) -> Self {
        let trials = outcomes.len();
        let recs: Vec<&TrialRecord> = outcomes.iter().filter_map(TrialOutcome::record).collect();
        let failures: Vec<TrialFailure> = outcomes
            .iter()
            .filter_map(|o| match o {
                TrialOutcome::Failed(f) => Some(f.clone()),
                TrialOutcome::Completed(_) => None,
            })
            .collect();
        let col = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> MeanCi {
            MeanCi::of(&recs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        let positive: Vec<&&TrialRecord> = recs.iter().filter(|r| r.tau_hat > 0.0).collect();
        let markov = thresholds
            .iter()
            .enumerate()
            .map(|(k, &threshold)| MarkovSummary {
                threshold,
                mean_bound: col(&|r| r.theory.markov.get(k).map(|p| p.bound.value)).mean,
            })
            .collect();
        Self {
            tau_true,
            epsilon,
            m,
            trials,
            completed: recs.len(),
            degraded: failures.len() as f64 > DEGRADED_FAILURE_SHARE * trials as f64,
            failures,
            tau_hat: col(&|r| Some(r.tau_hat)),
            tau_n: col(&|r| Some(r.tau_n)),
            tau_n_eps: col(&|r| Some(r.tau_n_eps)),
            rho_n: MeanCi::of_flags(recs.iter().map(|r| r.flip_n)),
            rho_n_eps: MeanCi::of_flags(recs.iter().map(|r| r.flip_n_eps)),
            joint_flip: MeanCi::of_flags(recs.iter().map(|r| r.sign_flags.joint)),
            positive_trials: positive.len(),
            cond_tau_n_nonpositive: MeanCi::of_flags(positive.iter().map(|r| r.sign_flags.tau_n_nonpositive)),
            cond_joint: MeanCi::of_flags(positive.iter().map(|r| r.sign_flags.joint)),
            g: col(&|r| Some(r.theory.g.g_value)),
            abs_g: col(&|r| Some(r.theory.g.g_value.abs())),
            eta: col(&|r| Some(r.theory.eta.eta)),
            sensitivity_tau: col(&|r| Some(r.theory.sensitivity_tau)),
            sigma_n: col(&|r| Some(r.theory.sigma_n)),
            thm1_bound: col(&|r| r.theory.thm1_bound.map(|b| b.value)),
            thm2_bound: col(&|r| r.theory.thm2_bound.map(|b| b.value)),
            flip_given_negative: col(&|r| r.theory.flip_given_negative),
            markov,
            records: keep.then_some(outcomes),
        }
    }

    /// Scalar metrics in a fixed order, for tidy output.
    pub fn metrics(&self) -> Vec<(String, Option<f64>)> {
        let mut out = Vec::new();
        let count = |k: usize| Some(k as f64);
        out.push(("trials".to_string(), count(self.trials)));
        out.push(("completed".to_string(), count(self.completed)));
        out.push(("degraded".to_string(), Some(if self.degraded { 1.0 } else { 0.0 })));
        out.push(("positive_trials".to_string(), count(self.positive_trials)));
        for (name, v) in [
            ("tau_hat", &self.tau_hat),
            ("tau_n", &self.tau_n),
            ("tau_n_eps", &self.tau_n_eps),
            ("rho_n", &self.rho_n),
            ("rho_n_eps", &self.rho_n_eps),
            ("joint_flip", &self.joint_flip),
            ("cond_tau_n_nonpositive", &self.cond_tau_n_nonpositive),
            ("cond_joint", &self.cond_joint),
            ("g", &self.g),
            ("abs_g", &self.abs_g),
            ("eta", &self.eta),
            ("sensitivity_tau", &self.sensitivity_tau),
            ("sigma_n", &self.sigma_n),
            ("thm1_bound", &self.thm1_bound),
            ("thm2_bound", &self.thm2_bound),
            ("flip_given_negative", &self.flip_given_negative),
        ] {
            out.push((format!("{name}_mean"), v.mean));
            out.push((format!("{name}_ci95"), v.half_width));
        }
        for mk in &self.markov {
            out.push((format!("markov_bound_{}", mk.threshold), mk.mean_bound));
        }
        out
    }
}

/// All cells for one true effect τ (or one dataset), ordered by m then ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tau_true: Option<f64>,
    pub cells: Vec<CellSummary>,
}

impl SweepReport {
    pub fn cell(&self, m: usize, epsilon: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.m == m && c.epsilon == epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub sweeps: Vec<SweepReport>,
}

impl ExperimentReport {
    pub fn sweep(&self, tau: Option<f64>) -> Option<&SweepReport> {
        self.sweeps.iter().find(|s| s.tau_true == tau)
    }
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_sweep_with(config, Execution::Parallel)
}

pub fn run_sweep_with(config: &ExperimentConfig, execution: Execution) -> Result<ExperimentReport> {
    config.validate()?;
    let source = SourceData::load(config)?;
    let sweeps = config
        .taus()
        .into_iter()
        .map(|tau| sweep_one(config, &source, tau, execution))
        .collect();
    Ok(ExperimentReport {
        config: config.clone(),
        sweeps,
    })
}

fn sweep_one(config: &ExperimentConfig, source: &SourceData, tau: Option<f64>, execution: Execution) -> SweepReport {
    let tasks: Vec<(usize, usize)> = config
        .m_grid
        .iter()
        .flat_map(|&m| (0..config.trials).map(move |t| (m, t)))
        .collect();
    let run = |&(m, trial): &(usize, usize)| -> Vec<TrialOutcome> {
        match prepare_trial(config, source, tau, m, trial) {
            Ok(p) => config.epsilon_grid.iter().map(|&e| p.evaluate(config, e)).collect(),
            Err(f) => vec![TrialOutcome::Failed(f); config.epsilon_grid.len()],
        }
    };
    // Both paths return results in task order, so aggregation is identical.
    let results: Vec<Vec<TrialOutcome>> = match execution {
        Execution::Parallel => tasks.par_iter().map(run).collect(),
        Execution::Serial => tasks.iter().map(run).collect(),
    };

    let mut cells = Vec::with_capacity(config.m_grid.len() * config.epsilon_grid.len());
    for (mi, &m) in config.m_grid.iter().enumerate() {
        let block = &results[mi * config.trials..(mi + 1) * config.trials];
        for (ei, &eps) in config.epsilon_grid.iter().enumerate() {
            let outcomes: Vec<TrialOutcome> = block.iter().map(|per_eps| per_eps[ei].clone()).collect();
            cells.push(CellSummary::aggregate(
                tau,
                eps,
                m,
                outcomes,
                &config.markov_thresholds,
                config.keep_trials,
            ));
        }
    }
    SweepReport { tau_true: tau, cells }
}
