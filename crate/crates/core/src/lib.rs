//! Cross-task zero-shot prompt evaluation.
//!
//! Generalized prompt templates are rendered against fixed-choice tasks, every
//! choice is rank-scored by a language-model backend, and the resulting
//! per-(prompt, task) accuracies and macro-F1 scores are turned into
//! within-task ranks, per-prompt median ranks, ablation groupings and
//! attribute correlations.
//!
//! The numeric core ([`scoring`] decision rules, [`metrics`], [`stats`],
//! [`analysis`]) is generic over [`Scalar`]; the aliases below fix the
//! scalar for the common cases.

pub mod analysis;
pub mod harness;
pub mod metrics;
pub mod scalar;
pub mod scoring;
pub mod stats;
pub mod task;
pub mod template;

pub use scalar::Scalar;

/// Exact scalar used to cross-check floating-point results.
pub type Rational = num_rational::Ratio<i128>;

pub type ScoredChoice = scoring::ScoredChoice<f64>;
pub type Prediction = scoring::Prediction<f64>;
pub type EvalResult = metrics::EvalResult<f64>;
pub type RankTable = metrics::RankTable<f64>;
pub type PromptProfile = analysis::PromptProfile<f64>;
pub type AblationReport = analysis::AblationReport<f64>;
pub type CorrelationRow = analysis::CorrelationRow<f64>;

pub type ExactPrediction = scoring::Prediction<Rational>;
pub type ExactEvalResult = metrics::EvalResult<Rational>;
pub type ExactRankTable = metrics::RankTable<Rational>;
