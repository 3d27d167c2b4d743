//! Order statistics over any [`Scalar`].
//!
//! Quantiles are computed at rational probabilities `num/den`, so the
//! interpolation weight is exact for exact scalar types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cmp_partial, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("statistic of an empty list")]
    EmptyList,
    #[error("list contains a value that cannot be ordered")]
    NonComparable,
    #[error("quantile probability {0}/{1} is outside [0, 1]")]
    BadProbability(usize, usize),
}

/// How a quantile between two order statistics is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Linear interpolation between the closest order statistics.
    #[default]
    Linear,
    Lower,
    Higher,
    Midpoint,
}

fn sorted<T: Scalar>(values: &[T]) -> Result<Vec<T>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyList);
    }
    if values.iter().any(|v| v.partial_cmp(v).is_none()) {
        return Err(StatsError::NonComparable);
    }
    let mut v = values.to_vec();
    v.sort_by(cmp_partial);
    Ok(v)
}

fn quantile_sorted<T: Scalar>(v: &[T], num: usize, den: usize, method: QuantileMethod) -> T {
    // position h = (n - 1) * num / den, split into integer and fractional part
    let scaled = (v.len() - 1) * num;
    let lo = scaled / den;
    let rem = scaled % den;
    if rem == 0 {
        return v[lo].clone();
    }
    let (a, b) = (v[lo].clone(), v[lo + 1].clone());
    match method {
        QuantileMethod::Lower => a,
        QuantileMethod::Higher => b,
        QuantileMethod::Midpoint => (a + b) / T::from_count(2),
        QuantileMethod::Linear => {
            let frac = T::from_count(rem) / T::from_count(den);
            a.clone() + frac * (b - a)
        }
    }
}

/// The `num/den` quantile of `values`.
pub fn quantile<T: Scalar>(values: &[T], num: usize, den: usize, method: QuantileMethod) -> Result<T, StatsError> {
    if den == 0 || num > den {
        return Err(StatsError::BadProbability(num, den));
    }
    let v = sorted(values)?;
    Ok(quantile_sorted(&v, num, den, method))
}

/// Middle element, or the mean of the two middle elements for even counts.
pub fn median<T: Scalar>(values: &[T]) -> Result<T, StatsError> {
    quantile(values, 1, 2, QuantileMethod::Midpoint)
}

pub fn mean<T: Scalar>(values: &[T]) -> Result<T, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyList);
    }
    let sum = values.iter().cloned().fold(T::zero(), |a, b| a + b);
    Ok(sum / T::from_count(values.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles<T> {
    pub q1: T,
    pub median: T,
    pub q3: T,
}

pub fn quartiles<T: Scalar>(values: &[T], method: QuantileMethod) -> Result<Quartiles<T>, StatsError> {
    let v = sorted(values)?;
    Ok(Quartiles {
        q1: quantile_sorted(&v, 1, 4, method),
        median: quantile_sorted(&v, 2, 4, method),
        q3: quantile_sorted(&v, 3, 4, method),
    })
}

/// Mean, median and first/third quartile of one population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub count: usize,
    pub mean: T,
    pub median: T,
    pub q1: T,
    pub q3: T,
}

pub fn summarize<T: Scalar>(values: &[T], method: QuantileMethod) -> Result<Summary<T>, StatsError> {
    let q = quartiles(values, method)?;
    Ok(Summary {
        count: values.len(),
        mean: mean(values)?,
        median: median(values)?,
        q1: q.q1,
        q3: q.q3,
    })
}
