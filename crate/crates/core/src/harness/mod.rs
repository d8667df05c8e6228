//! Monte-Carlo experiment driver.

pub mod config;
pub mod emit;
pub mod sweep;
pub mod trial;

pub use config::{CsvSource, DataSource, ExperimentConfig, SyntheticSource};
pub use emit::{emit, EmitFormat};
pub use sweep::{run_sweep, run_sweep_with, CellSummary, Execution, ExperimentReport, MeanCi, SweepReport};
pub use trial::{prepare_trial, run_trial, PreparedTrial, SourceData, TrialOutcome, TrialRecord, TrialStage};
