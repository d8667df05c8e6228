//! Differentially private inverse-probability-weighted estimation of
//! treatment effects, with the bias and sign-flip bounds that come with it.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod ingest;
pub mod privacy;
pub mod propensity;
pub mod rng;
pub mod synth;
pub mod theory;

pub use dataset::{Dataset, OutcomeBounds, PrivacyBudget, Split, SplitMode};
pub use error::{Error, Result};
pub use estimators::{EffectEstimate, Estimand, Stage};
pub use privacy::{GaussianMechanism, PrivateModel, ReleasedModel};
pub use propensity::{PropensityModel, TrainOptions};
pub use rng::{Purpose, RngStream};
pub use theory::{BiasReport, ProbabilityBound, SignConvention, SupportBound, TheoryReport};
