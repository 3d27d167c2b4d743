//! Rank scoring of fixed choices.
//!
//! A backend supplies per-token log-probabilities of each choice continuation
//! given the rendered prompt. Two decision rules are applied to them: the
//! summed log-probability (argmax of the sequence probability) and the
//! length-normalized average log-likelihood. Ties go to the lowest choice index.

mod backend;
mod http;
mod ngram;
pub mod wire;

pub use backend::{BackendDescriptor, ScoringBackend, UniformBackend};
pub use http::HttpBackend;
pub use ngram::{byte_token, NgramModel, SEED_CORPUS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::task::{format_choice_string, mcq_letter, ChoiceFormat, Example, FixedChoiceTask, TaskError};
use crate::template::{render, AlignmentRule, PromptTemplate, TemplateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("continuation is empty")]
    EmptyContinuation,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("log-probability at token {0} is not finite")]
    NonFiniteLogProb(usize),
    #[error("log-probability at token {0} is positive")]
    PositiveLogProb(usize),
    #[error("backend returned {tokens} tokens but {logprobs} log-probabilities")]
    ShapeMismatch { tokens: usize, logprobs: usize },
    #[error("backend returned {got} results for {expected} requests")]
    BatchMismatch { expected: usize, got: usize },
    #[error("no choices to score")]
    EmptyScoreList,
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Error raised while producing a prediction for one example.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl PredictError {
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, PredictError::Score(ScoreError::BackendUnavailable(_)))
    }
}

/// Per-token log-probabilities of one choice continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChoice<T = f64> {
    pub choice_index: usize,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<T>,
}

impl<T: Scalar> ScoredChoice<T> {
    /// Validates shape (at least one token, one log-probability per token)
    /// and that every log-probability is finite and not above zero.
    pub fn new(choice_index: usize, tokens: Vec<String>, token_logprobs: Vec<T>) -> Result<Self, ScoreError> {
        if tokens.len() != token_logprobs.len() {
            return Err(ScoreError::ShapeMismatch {
                tokens: tokens.len(),
                logprobs: token_logprobs.len(),
            });
        }
        if tokens.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        for (i, lp) in token_logprobs.iter().enumerate() {
            if !lp.is_finite_value() {
                return Err(ScoreError::NonFiniteLogProb(i));
            }
            if *lp > T::zero() {
                return Err(ScoreError::PositiveLogProb(i));
            }
        }
        Ok(Self {
            choice_index,
            tokens,
            token_logprobs,
        })
    }

    /// Builds a choice from log-probabilities alone, with placeholder token names.
    pub fn from_logprobs(choice_index: usize, token_logprobs: Vec<T>) -> Result<Self, ScoreError> {
        let tokens = (0..token_logprobs.len()).map(|i| format!("t{i}")).collect();
        Self::new(choice_index, tokens, token_logprobs)
    }

    pub fn length(&self) -> usize {
        self.tokens.len()
    }

    pub fn total_logprob(&self) -> T {
        self.token_logprobs
            .iter()
            .cloned()
            .fold(T::zero(), |acc, lp| acc + lp)
    }

    pub fn average_logprob(&self) -> T {
        self.total_logprob() / T::from_count(self.length())
    }
}

fn argmax_first<T: PartialOrd, I: IntoIterator<Item = T>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Choice with the largest summed log-probability (sequence probability).
pub fn predict_eq1<T: Scalar>(scored: &[ScoredChoice<T>]) -> Result<usize, ScoreError> {
    argmax_first(scored.iter().map(ScoredChoice::total_logprob)).ok_or(ScoreError::EmptyScoreList)
}

/// Choice with the largest average per-token log-likelihood.
pub fn predict_eq2<T: Scalar>(scored: &[ScoredChoice<T>]) -> Result<usize, ScoreError> {
    argmax_first(scored.iter().map(ScoredChoice::average_logprob)).ok_or(ScoreError::EmptyScoreList)
}

/// Probability-space form of [`predict_eq1`]: argmax of the product of
/// per-token conditional probabilities. Meant for exact scalar types.
pub fn predict_eq1_product<T: Scalar>(token_probs: &[Vec<T>]) -> Result<usize, ScoreError> {
    argmax_first(
        token_probs
            .iter()
            .map(|ps| ps.iter().cloned().fold(T::one(), |acc, p| acc * p)),
    )
    .ok_or(ScoreError::EmptyScoreList)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// summed log-probability
    Eq1,
    /// average log-likelihood
    Eq2,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Eq1 => "eq1",
            Decision::Eq2 => "eq2",
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eq1" => Ok(Decision::Eq1),
            "eq2" => Ok(Decision::Eq2),
            other => Err(format!("unknown decision rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T = f64> {
    pub example_id: String,
    pub gold_index: usize,
    pub eq1_index: usize,
    pub eq2_index: usize,
    pub per_choice: Vec<ScoredChoice<T>>,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_scores(example: &Example, per_choice: Vec<ScoredChoice<T>>) -> Result<Self, ScoreError> {
        Ok(Self {
            example_id: example.id.clone(),
            gold_index: example.gold_index,
            eq1_index: predict_eq1(&per_choice)?,
            eq2_index: predict_eq2(&per_choice)?,
            per_choice,
        })
    }
}

impl<T> Prediction<T> {
    pub fn decided(&self, decision: Decision) -> usize {
        match decision {
            Decision::Eq1 => self.eq1_index,
            Decision::Eq2 => self.eq2_index,
        }
    }
}

/// What is scored as the continuation for MCQ-formatted prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqTarget {
    /// the choice text itself
    #[default]
    ChoiceText,
    /// the choice letter shown in the prompt
    Letter,
}

/// Separator between the rendered prompt and a scored continuation.
pub const CONTEXT_SEPARATOR: &str = " ";

/// Choice presentation for a template: lettered when the template is an MCQ prompt.
pub fn choice_format_for(template: &PromptTemplate) -> ChoiceFormat {
    if template.attributes.is_mcq {
        ChoiceFormat::McqLetters
    } else {
        ChoiceFormat::Plain
    }
}

/// Rendered prompt plus separator, ready to be scored against.
pub fn template_context(
    template: &PromptTemplate,
    rule: &AlignmentRule,
    task: &FixedChoiceTask,
    example: &Example,
    format: ChoiceFormat,
) -> Result<String, PredictError> {
    let choice_string = if template.attributes.has_choices {
        format_choice_string(task.choices(), format)?
    } else {
        String::new()
    };
    let mut context = render(template, example, rule, &choice_string)?;
    context.push_str(CONTEXT_SEPARATOR);
    Ok(context)
}

/// Context for the no-template baseline: the example's field values in
/// record order, space-joined.
pub fn baseline_context(example: &Example) -> String {
    let mut context = example.fields.values().cloned().collect::<Vec<_>>().join(" ");
    context.push_str(CONTEXT_SEPARATOR);
    context
}

/// Continuation strings to score, in choice order.
pub fn continuations(task: &FixedChoiceTask, format: ChoiceFormat, target: McqTarget) -> Result<Vec<String>, TaskError> {
    match (format, target) {
        (ChoiceFormat::McqLetters, McqTarget::Letter) => (0..task.num_choices())
            .map(|i| mcq_letter(i).map(String::from))
            .collect(),
        _ => Ok(task.choices().to_vec()),
    }
}

/// Scores one continuation and validates the backend's answer.
pub fn score_continuation(
    backend: &dyn ScoringBackend,
    context: &str,
    continuation: &str,
) -> Result<ScoredChoice, ScoreError> {
    if continuation.is_empty() {
        return Err(ScoreError::EmptyContinuation);
    }
    let scores = backend.score(context, continuation)?;
    ScoredChoice::new(0, scores.tokens, scores.logprobs)
}

/// Scores every continuation against one context and applies both rules.
pub fn predict_with_context(
    backend: &dyn ScoringBackend,
    context: &str,
    continuations: &[String],
    example: &Example,
) -> Result<Prediction, ScoreError> {
    if continuations.iter().any(String::is_empty) {
        return Err(ScoreError::EmptyContinuation);
    }
    let requests: Vec<wire::ScoreRequest> = continuations
        .iter()
        .map(|c| wire::ScoreRequest {
            context: context.to_string(),
            continuation: c.clone(),
        })
        .collect();
    let results = backend.score_batch(&requests)?;
    if results.len() != requests.len() {
        return Err(ScoreError::BatchMismatch {
            expected: requests.len(),
            got: results.len(),
        });
    }
    let per_choice = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| ScoredChoice::new(i, r.tokens, r.logprobs))
        .collect::<Result<Vec<_>, _>>()?;
    Prediction::from_scores(example, per_choice)
}

/// Renders the prompt once, scores every choice, and records both decisions.
pub fn predict_example(
    backend: &dyn ScoringBackend,
    template: &PromptTemplate,
    rule: &AlignmentRule,
    task: &FixedChoiceTask,
    example: &Example,
    format: ChoiceFormat,
    target: McqTarget,
) -> Result<Prediction, PredictError> {
    let context = template_context(template, rule, task, example, format)?;
    let conts = continuations(task, format, target)?;
    Ok(predict_with_context(backend, &context, &conts, example)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use proptest::prelude::*;

    fn sc(lps: &[f64]) -> ScoredChoice {
        ScoredChoice::from_logprobs(0, lps.to_vec()).unwrap()
    }

    #[test]
    fn eq1_examples() {
        assert_eq!(predict_eq1(&[sc(&[-1.0]), sc(&[-1.5])]).unwrap(), 0);
        assert_eq!(predict_eq1(&[sc(&[-2.0]), sc(&[-2.0])]).unwrap(), 0);
        assert_eq!(predict_eq1(&[sc(&[-1.0]), sc(&[-0.5, -0.5, -0.5])]).unwrap(), 0);
        assert_eq!(predict_eq1::<f64>(&[]).unwrap_err(), ScoreError::EmptyScoreList);
    }

    #[test]
    fn eq2_examples() {
        assert_eq!(predict_eq2(&[sc(&[-1.0]), sc(&[-0.5]), sc(&[-2.0])]).unwrap(), 1);
        assert_eq!(predict_eq2(&[sc(&[-1.0]), sc(&[-0.5, -0.5, -0.5])]).unwrap(), 1);
        assert_eq!(predict_eq2(&[sc(&[-3.0])]).unwrap(), 0);
        assert_eq!(predict_eq2::<f64>(&[]).unwrap_err(), ScoreError::EmptyScoreList);
    }

    #[test]
    fn scored_choice_validation() {
        assert_eq!(
            ScoredChoice::<f64>::from_logprobs(0, vec![]).unwrap_err(),
            ScoreError::EmptyContinuation
        );
        assert_eq!(
            ScoredChoice::from_logprobs(0, vec![-1.0, f64::NAN]).unwrap_err(),
            ScoreError::NonFiniteLogProb(1)
        );
        assert_eq!(
            ScoredChoice::from_logprobs(0, vec![f64::NEG_INFINITY]).unwrap_err(),
            ScoreError::NonFiniteLogProb(0)
        );
        assert_eq!(
            ScoredChoice::from_logprobs(0, vec![0.1]).unwrap_err(),
            ScoreError::PositiveLogProb(0)
        );
        assert!(matches!(
            ScoredChoice::new(0, vec!["a".into()], vec![-1.0, -1.0]),
            Err(ScoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn exact_rational_rules() {
        let a = ScoredChoice::from_logprobs(0, vec![Rational::new(-1, 1)]).unwrap();
        let b = ScoredChoice::from_logprobs(1, vec![Rational::new(-1, 2); 3]).unwrap();
        assert_eq!(predict_eq1(&[a.clone(), b.clone()]).unwrap(), 0);
        assert_eq!(predict_eq2(&[a, b]).unwrap(), 1);
    }

    fn small_probs() -> impl Strategy<Value = Vec<Vec<(i64, i64)>>> {
        proptest::collection::vec(
            proptest::collection::vec((1i64..=9, 1i64..=9).prop_map(|(a, b)| (a.min(b), a.max(b))), 1..4),
            1..5,
        )
    }

    proptest! {
        // Summing ln p in f64 and multiplying exact rationals pick the same
        // choice whenever the exact products are separated by more than
        // floating-point noise.
        #[test]
        fn log_space_matches_exact_product(probs in small_probs()) {
            let exact: Vec<Vec<Rational>> = probs
                .iter()
                .map(|ps| ps.iter().map(|&(n, d)| Rational::new(n as i128, d as i128)).collect())
                .collect();
            let products: Vec<Rational> = exact
                .iter()
                .map(|ps| ps.iter().cloned().fold(Rational::from_integer(1), |a, p| a * p))
                .collect();
            let logs: Vec<ScoredChoice> = probs
                .iter()
                .enumerate()
                .map(|(i, ps)| {
                    ScoredChoice::from_logprobs(i, ps.iter().map(|&(n, d)| (n as f64 / d as f64).ln()).collect()).unwrap()
                })
                .collect();
            let exact_winner = predict_eq1_product(&exact).unwrap();
            let float_winner = predict_eq1(&logs).unwrap();
            let tied = products.iter().enumerate().any(|(i, p)| i != exact_winner && *p == products[exact_winner]);
            if tied {
                // rounding may split an exact tie; the float winner must still be one of the tied maxima
                let lowest = products.iter().position(|p| *p == products[exact_winner]).unwrap();
                prop_assert_eq!(exact_winner, lowest);
                prop_assert!(products[float_winner] == products[exact_winner]);
            } else {
                prop_assert_eq!(exact_winner, float_winner);
            }
        }

        #[test]
        fn length_one_rules_agree(lps in proptest::collection::vec(-20.0f64..0.0, 1..8)) {
            let scored: Vec<_> = lps.iter().enumerate().map(|(i, &lp)| ScoredChoice::from_logprobs(i, vec![lp]).unwrap()).collect();
            prop_assert_eq!(predict_eq1(&scored).unwrap(), predict_eq2(&scored).unwrap());
        }

        #[test]
        fn raising_winner_keeps_it(
            choices in proptest::collection::vec(proptest::collection::vec(-10.0f64..-0.5, 1..5), 1..6),
            token in 0usize..5,
            bump in 0.0f64..0.5,
        ) {
            let scored: Vec<_> = choices.iter().enumerate().map(|(i, c)| ScoredChoice::from_logprobs(i, c.clone()).unwrap()).collect();
            for rule in [predict_eq1::<f64>, predict_eq2::<f64>] {
                let winner = rule(&scored).unwrap();
                let mut raised = scored.clone();
                let k = token % raised[winner].token_logprobs.len();
                raised[winner].token_logprobs[k] += bump;
                prop_assert_eq!(rule(&raised).unwrap(), winner);
            }
        }
    }
}
