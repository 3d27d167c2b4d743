//! Ablation and correlation analytics over per-prompt median ranks.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{rank_within_task, MetricError};
use crate::scalar::Scalar;
use crate::stats::{summarize, QuantileMethod, StatsError, Summary};
use crate::template::AttributeSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("ablation group `{0}` has no prompts")]
    EmptyGroup(String),
    #[error("relative improvement needs positive ranks")]
    NonPositiveRank,
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("bucket boundaries must be nonempty and strictly ascending")]
    InvalidBucketing,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Everything the analyses need to know about one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptProfile<T = f64> {
    pub prompt_id: String,
    pub attributes: AttributeSet,
    pub length: usize,
    pub shared_tokens: usize,
    pub mar: T,
    pub mfr: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    TrainingVsUnseen,
    Choices,
    Mcq,
    ExtraText,
    LengthBucket,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::TrainingVsUnseen,
        AblationAxis::Choices,
        AblationAxis::Mcq,
        AblationAxis::ExtraText,
        AblationAxis::LengthBucket,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::TrainingVsUnseen => "training_vs_unseen",
            AblationAxis::Choices => "choices",
            AblationAxis::Mcq => "mcq",
            AblationAxis::ExtraText => "extra_text",
            AblationAxis::LengthBucket => "length_bucket",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which prompts enter the MCQ comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqPopulation {
    /// MCQ vs non-MCQ prompts among those that show the choices.
    #[default]
    WithChoices,
    /// MCQ vs every other prompt.
    All,
}

/// Ascending integer cut points. `[14, 21, 25]` yields `<14`, `[14,21)`,
/// `[21,25)` and `>=25`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucketing {
    boundaries: Vec<usize>,
}

impl Default for LengthBucketing {
    fn default() -> Self {
        Self {
            boundaries: vec![14, 21, 25],
        }
    }
}

impl LengthBucketing {
    pub fn new(boundaries: Vec<usize>) -> Result<Self, AnalysisError> {
        if boundaries.is_empty() || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalysisError::InvalidBucketing);
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_buckets(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Bucket index of `length`; lower bounds are inclusive.
    pub fn bucket_of(&self, length: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= length)
    }

    /// Inclusive lower bound of a bucket (`None` for the first one).
    pub fn lower_bound(&self, bucket: usize) -> Option<usize> {
        bucket.checked_sub(1).map(|i| self.boundaries[i])
    }

    pub fn label(&self, bucket: usize) -> String {
        let n = self.boundaries.len();
        match bucket {
            0 => format!("<{}", self.boundaries[0]),
            b if b == n => format!(">={}", self.boundaries[n - 1]),
            b => format!("[{},{})", self.boundaries[b - 1], self.boundaries[b]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats<T = f64> {
    pub label: String,
    pub mar: Summary<T>,
    pub mfr: Summary<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport<T = f64> {
    pub axis: AblationAxis,
    pub groups: Vec<GroupStats<T>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationOptions {
    pub quantile_method: QuantileMethod,
    pub mcq_population: McqPopulation,
    pub bucketing: LengthBucketing,
}

fn group_stats<T: Scalar>(
    label: &str,
    members: &[&PromptProfile<T>],
    method: QuantileMethod,
) -> Result<GroupStats<T>, AnalysisError> {
    if members.is_empty() {
        return Err(AnalysisError::EmptyGroup(label.to_string()));
    }
    let mars: Vec<T> = members.iter().map(|p| p.mar.clone()).collect();
    let mfrs: Vec<T> = members.iter().map(|p| p.mfr.clone()).collect();
    Ok(GroupStats {
        label: label.to_string(),
        mar: summarize(&mars, method)?,
        mfr: summarize(&mfrs, method)?,
    })
}

/// Splits the prompts along `axis` and summarizes each group's MAR and MFR.
pub fn group_ablation<T: Scalar>(
    profiles: &[PromptProfile<T>],
    axis: AblationAxis,
    options: &AblationOptions,
) -> Result<AblationReport<T>, AnalysisError> {
    let split = |pred: &dyn Fn(&AttributeSet) -> bool, yes: &str, no: &str, pool: Vec<&PromptProfile<T>>| {
        let (a, b): (Vec<_>, Vec<_>) = pool.into_iter().partition(|p| pred(&p.attributes));
        Ok::<_, AnalysisError>(vec![
            group_stats(yes, &a, options.quantile_method)?,
            group_stats(no, &b, options.quantile_method)?,
        ])
    };
    let all: Vec<&PromptProfile<T>> = profiles.iter().collect();
    let groups = match axis {
        AblationAxis::TrainingVsUnseen => split(&|a| a.is_training_prompt, "Training Prompts", "Unseen Prompts", all)?,
        AblationAxis::Choices => split(&|a| a.has_choices, "With Choices", "No Choices", all)?,
        AblationAxis::Mcq => {
            let pool = match options.mcq_population {
                McqPopulation::WithChoices => all.into_iter().filter(|p| p.attributes.has_choices).collect(),
                McqPopulation::All => all,
            };
            split(&|a| a.is_mcq, "Is MCQ", "Not MCQ", pool)?
        }
        AblationAxis::ExtraText => split(&|a| a.has_extra_text, "Extra Text", "No Extra Text", all)?,
        AblationAxis::LengthBucket => {
            let b = &options.bucketing;
            (0..b.num_buckets())
                .map(|i| {
                    let members: Vec<_> = profiles.iter().filter(|p| b.bucket_of(p.length) == i).collect();
                    group_stats(&b.label(i), &members, options.quantile_method)
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(AblationReport { axis, groups })
}

/// Percentage by which `better_mar` improves on `worse_mar`:
/// `100 * (worse - better) / better`.
pub fn relative_improvement<T: Scalar>(better_mar: T, worse_mar: T) -> Result<T, AnalysisError> {
    if !(better_mar > T::zero() && worse_mar > T::zero()) {
        return Err(AnalysisError::NonPositiveRank);
    }
    Ok(T::from_count(100) * (worse_mar - better_mar.clone()) / better_mar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    /// Product-moment correlation (point-biserial for 0/1 attributes).
    #[default]
    Pearson,
    /// Pearson correlation of average-tie ranks.
    Spearman,
}

/// Pearson product-moment correlation of two equally long samples.
pub fn pearson<T: Scalar + Float>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFewPoints(x.len()));
    }
    let n = T::from_count(x.len());
    let mx = x.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = y.iter().fold(T::zero(), |a, &b| a + b) / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(AnalysisError::ZeroVariance);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

fn fractional_ranks<T: Scalar>(values: &[T]) -> Result<Vec<T>, AnalysisError> {
    let keyed: BTreeMap<String, T> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("{i:012}"), v.clone()))
        .collect();
    Ok(rank_within_task(&keyed)?.into_values().collect())
}

pub fn correlate<T: Scalar + Float>(x: &[T], y: &[T], method: CorrelationMethod) -> Result<T, AnalysisError> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => {
            if x.len() != y.len() {
                return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
            }
            pearson(&fractional_ranks(x)?, &fractional_ranks(y)?)
        }
    }
}

/// Correlates two prompt-keyed maps over their shared keys.
pub fn correlate_by_prompt<T: Scalar + Float>(
    attribute_values: &BTreeMap<String, T>,
    ranks: &BTreeMap<String, T>,
    method: CorrelationMethod,
) -> Result<T, AnalysisError> {
    let (x, y): (Vec<T>, Vec<T>) = attribute_values
        .iter()
        .filter_map(|(k, &v)| ranks.get(k).map(|&r| (v, r)))
        .unzip();
    correlate(&x, &y, method)
}

/// Point-biserial correlation from group means and the population standard
/// deviation: `(m1 - m0) / s * sqrt(p * q)`.
pub fn point_biserial<T: Scalar + Float>(flags: &[bool], y: &[T]) -> Result<T, AnalysisError> {
    if flags.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(flags.len(), y.len()));
    }
    if y.len() < 3 {
        return Err(AnalysisError::TooFewPoints(y.len()));
    }
    let n1 = flags.iter().filter(|&&f| f).count();
    let n0 = flags.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let n = T::from_count(y.len());
    let mean = y.iter().fold(T::zero(), |a, &b| a + b) / n;
    let var = y.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
    if var == T::zero() {
        return Err(AnalysisError::ZeroVariance);
    }
    let group_mean = |want: bool, count: usize| {
        flags
            .iter()
            .zip(y)
            .filter(|(&f, _)| f == want)
            .fold(T::zero(), |a, (_, &b)| a + b)
            / T::from_count(count)
    };
    let (m1, m0) = (group_mean(true, n1), group_mean(false, n0));
    let p = T::from_count(n1) / n;
    let q = T::from_count(n0) / n;
    Ok((m1 - m0) / var.sqrt() * (p * q).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationAttribute {
    HasChoices,
    IsMcq,
    IsTrainingPrompt,
    Length,
    SharedTokens,
}

impl CorrelationAttribute {
    pub const ALL: [CorrelationAttribute; 5] = [
        CorrelationAttribute::HasChoices,
        CorrelationAttribute::IsMcq,
        CorrelationAttribute::IsTrainingPrompt,
        CorrelationAttribute::Length,
        CorrelationAttribute::SharedTokens,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationAttribute::HasChoices => "has_choices",
            CorrelationAttribute::IsMcq => "is_mcq",
            CorrelationAttribute::IsTrainingPrompt => "is_training_prompt",
            CorrelationAttribute::Length => "length",
            CorrelationAttribute::SharedTokens => "shared_tokens",
        }
    }

    fn encode<T: Scalar>(self, p: &PromptProfile<T>) -> T {
        let flag = |b: bool| T::from_count(b as usize);
        match self {
            CorrelationAttribute::HasChoices => flag(p.attributes.has_choices),
            CorrelationAttribute::IsMcq => flag(p.attributes.is_mcq),
            CorrelationAttribute::IsTrainingPrompt => flag(p.attributes.is_training_prompt),
            CorrelationAttribute::Length => T::from_count(p.length),
            CorrelationAttribute::SharedTokens => T::from_count(p.shared_tokens),
        }
    }
}

/// Attribute-rank correlation. `None` where the correlation is undefined
/// (constant attribute, constant ranks, or fewer than three prompts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow<T = f64> {
    pub attribute: CorrelationAttribute,
    pub r_accuracy: Option<T>,
    pub r_f1: Option<T>,
}

pub fn correlation_table<T: Scalar + Float>(
    profiles: &[PromptProfile<T>],
    method: CorrelationMethod,
) -> Result<Vec<CorrelationRow<T>>, AnalysisError> {
    let mars: Vec<T> = profiles.iter().map(|p| p.mar).collect();
    let mfrs: Vec<T> = profiles.iter().map(|p| p.mfr).collect();
    let defined = |r: Result<T, AnalysisError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(AnalysisError::ZeroVariance | AnalysisError::TooFewPoints(_)) => Ok(None),
        Err(e) => Err(e),
    };
    CorrelationAttribute::ALL
        .into_iter()
        .map(|attribute| {
            let xs: Vec<T> = profiles.iter().map(|p| attribute.encode(p)).collect();
            Ok(CorrelationRow {
                attribute,
                r_accuracy: defined(correlate(&xs, &mars, method))?,
                r_f1: defined(correlate(&xs, &mfrs, method))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary<T = f64> {
    pub label: String,
    /// inclusive lower bound; `None` for the open first bucket
    pub lower: Option<usize>,
    pub count: usize,
    pub mar: Option<Summary<T>>,
    pub mfr: Option<Summary<T>>,
}

/// Assigns every prompt to one length bucket and summarizes each bucket.
/// Empty buckets are reported with a zero count.
pub fn length_bucket_summary<T: Scalar>(
    profiles: &[PromptProfile<T>],
    bucketing: &LengthBucketing,
    method: QuantileMethod,
) -> Result<Vec<BucketSummary<T>>, AnalysisError> {
    (0..bucketing.num_buckets())
        .map(|i| {
            let members: Vec<&PromptProfile<T>> =
                profiles.iter().filter(|p| bucketing.bucket_of(p.length) == i).collect();
            let (mar, mfr) = if members.is_empty() {
                (None, None)
            } else {
                let s = group_stats("", &members, method)?;
                (Some(s.mar), Some(s.mfr))
            };
            Ok(BucketSummary {
                label: bucketing.label(i),
                lower: bucketing.lower_bound(i),
                count: members.len(),
                mar,
                mfr,
            })
        })
        .collect()
}
