//! Per-(prompt, task) metrics and rank aggregation.
//!
//! Within each task, entrants are ranked by metric (higher metric, lower rank
//! number) with tied values sharing the average of the positions they span.
//! A prompt's median accuracy rank (MAR) and median F1 rank (MFR) are the
//! medians of its per-task ranks; lower is better.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cmp_partial, Scalar};
use crate::scoring::{Decision, Prediction};
use crate::stats::{self, QuantileMethod, Quartiles, StatsError};
use crate::task::FixedChoiceTask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{predictions} predictions for {examples} examples")]
    CountMismatch { predictions: usize, examples: usize },
    #[error("task has no examples")]
    NoExamples,
    #[error("predicted index {index} out of range for {choices} choices")]
    IndexOutOfRange { index: usize, choices: usize },
    #[error("metric value for `{0}` cannot be ordered")]
    NonComparable(String),
    #[error("nothing to rank")]
    NoEntrants,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Gold-by-predicted counts over the fixed choice set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[gold][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_pairs<I: IntoIterator<Item = (usize, usize)>>(num_classes: usize, pairs: I) -> Result<Self, MetricError> {
        let mut m = Self::new(num_classes);
        for (gold, pred) in pairs {
            for index in [gold, pred] {
                if index >= num_classes {
                    return Err(MetricError::IndexOutOfRange {
                        index,
                        choices: num_classes,
                    });
                }
            }
            m.counts[gold][pred] += 1;
        }
        Ok(m)
    }

    pub fn from_predictions<T>(
        predictions: &[Prediction<T>],
        task: &FixedChoiceTask,
        decision: Decision,
    ) -> Result<Self, MetricError> {
        check_counts(predictions, task)?;
        Self::from_pairs(
            task.num_choices(),
            predictions.iter().map(|p| (p.gold_index, p.decided(decision))),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Column sums: how often each class was predicted.
    pub fn predicted_histogram(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|j| self.counts.iter().map(|row| row[j]).sum())
            .collect()
    }

    pub fn accuracy<T: Scalar>(&self) -> Result<T, MetricError> {
        let total = self.total();
        if total == 0 {
            return Err(MetricError::NoExamples);
        }
        Ok(T::from_count(self.correct() as usize) / T::from_count(total as usize))
    }

    /// Unweighted mean of per-class F1 over every class of the choice set.
    /// A class with no true positives scores zero.
    pub fn macro_f1<T: Scalar>(&self) -> Result<T, MetricError> {
        if self.total() == 0 {
            return Err(MetricError::NoExamples);
        }
        let c = self.num_classes();
        let predicted = self.predicted_histogram();
        let mut sum = T::zero();
        for k in 0..c {
            let tp = self.counts[k][k];
            let gold: u64 = self.counts[k].iter().sum();
            let fp = predicted[k] - tp;
            let fn_ = gold - tp;
            if tp > 0 {
                let num = T::from_count(2 * tp as usize);
                sum = sum + num.clone() / (num + T::from_count((fp + fn_) as usize));
            }
        }
        Ok(sum / T::from_count(c))
    }
}

fn check_counts<T>(predictions: &[Prediction<T>], task: &FixedChoiceTask) -> Result<(), MetricError> {
    if predictions.len() != task.examples().len() {
        return Err(MetricError::CountMismatch {
            predictions: predictions.len(),
            examples: task.examples().len(),
        });
    }
    Ok(())
}

pub fn accuracy<T: Scalar, P>(predictions: &[Prediction<P>], task: &FixedChoiceTask, decision: Decision) -> Result<T, MetricError> {
    ConfusionMatrix::from_predictions(predictions, task, decision)?.accuracy()
}

pub fn macro_f1<T: Scalar, P>(predictions: &[Prediction<P>], task: &FixedChoiceTask, decision: Decision) -> Result<T, MetricError> {
    ConfusionMatrix::from_predictions(predictions, task, decision)?.macro_f1()
}

/// Metrics of one prompt on one task under one decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult<T = f64> {
    pub prompt_id: String,
    pub task_id: String,
    pub decision: Decision,
    pub n_examples: usize,
    pub accuracy: T,
    pub macro_f1: T,
    /// how often each choice index was predicted
    pub choice_histogram: Vec<u64>,
}

pub fn evaluate<T: Scalar, P>(
    prompt_id: &str,
    task: &FixedChoiceTask,
    predictions: &[Prediction<P>],
    decision: Decision,
) -> Result<EvalResult<T>, MetricError> {
    let m = ConfusionMatrix::from_predictions(predictions, task, decision)?;
    Ok(EvalResult {
        prompt_id: prompt_id.to_string(),
        task_id: task.id.clone(),
        decision,
        n_examples: predictions.len(),
        accuracy: m.accuracy()?,
        macro_f1: m.macro_f1()?,
        choice_histogram: m.predicted_histogram(),
    })
}

/// Fractional ranks, best (highest value) first, ties averaged.
pub fn rank_within_task<T: Scalar>(values: &BTreeMap<String, T>) -> Result<BTreeMap<String, T>, MetricError> {
    if values.is_empty() {
        return Err(MetricError::NoEntrants);
    }
    if let Some((id, _)) = values.iter().find(|(_, v)| v.partial_cmp(v).is_none()) {
        return Err(MetricError::NonComparable(id.clone()));
    }
    let mut order: Vec<(&String, &T)> = values.iter().collect();
    order.sort_by(|a, b| cmp_partial(b.1, a.1));
    let mut ranks = BTreeMap::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && order[end].1 == order[start].1 {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let rank = T::from_count(start + 1 + end) / T::from_count(2);
        for (id, _) in &order[start..end] {
            ranks.insert((*id).clone(), rank.clone());
        }
        start = end;
    }
    Ok(ranks)
}

pub fn median_rank<T: Scalar>(ranks: &[T]) -> Result<T, MetricError> {
    Ok(stats::median(ranks)?)
}

pub fn quartiles<T: Scalar>(values: &[T]) -> Result<Quartiles<T>, MetricError> {
    Ok(stats::quartiles(values, QuantileMethod::Linear)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRank<T = f64> {
    pub mar: T,
    pub mfr: T,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankTable<T = f64> {
    /// task -> prompt -> accuracy rank
    pub accuracy_ranks: BTreeMap<String, BTreeMap<String, T>>,
    /// task -> prompt -> F1 rank
    pub f1_ranks: BTreeMap<String, BTreeMap<String, T>>,
    pub per_prompt: BTreeMap<String, PromptRank<T>>,
}

impl<T: Scalar> RankTable<T> {
    /// Ranks every task's entrants and aggregates per prompt. Results for
    /// other decision rules must be filtered out beforehand.
    pub fn build(results: &[EvalResult<T>]) -> Result<Self, MetricError> {
        let mut acc: BTreeMap<String, BTreeMap<String, T>> = BTreeMap::new();
        let mut f1: BTreeMap<String, BTreeMap<String, T>> = BTreeMap::new();
        for r in results {
            acc.entry(r.task_id.clone())
                .or_default()
                .insert(r.prompt_id.clone(), r.accuracy.clone());
            f1.entry(r.task_id.clone())
                .or_default()
                .insert(r.prompt_id.clone(), r.macro_f1.clone());
        }
        let accuracy_ranks = acc
            .iter()
            .map(|(task, vals)| Ok((task.clone(), rank_within_task(vals)?)))
            .collect::<Result<BTreeMap<_, _>, MetricError>>()?;
        let f1_ranks = f1
            .iter()
            .map(|(task, vals)| Ok((task.clone(), rank_within_task(vals)?)))
            .collect::<Result<BTreeMap<_, _>, MetricError>>()?;

        let mut by_prompt: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
        for ranks in accuracy_ranks.values() {
            for (p, r) in ranks {
                by_prompt.entry(p.clone()).or_default().0.push(r.clone());
            }
        }
        for ranks in f1_ranks.values() {
            for (p, r) in ranks {
                by_prompt.entry(p.clone()).or_default().1.push(r.clone());
            }
        }
        let per_prompt = by_prompt
            .into_iter()
            .map(|(p, (a, f))| {
                Ok((
                    p,
                    PromptRank {
                        n_tasks: a.len(),
                        mar: median_rank(&a)?,
                        mfr: median_rank(&f)?,
                    },
                ))
            })
            .collect::<Result<_, MetricError>>()?;
        Ok(Self {
            accuracy_ranks,
            f1_ranks,
            per_prompt,
        })
    }
}
