//! Test-set criteria: MAE, SMSE, and Gaussian NLL.

use crate::error::{dim_err, Error, Result};
use crate::predict::PredictiveSummary;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// One task's scores, serialized as the metrics JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub mae: f64,
    pub smse: f64,
    pub nll: f64,
    pub n_test: usize,
    pub seed: u64,
}

/// `(MAE, SMSE, NLL)` of predictions against `truth`. SMSE divides by the
/// variance of the training targets; NLL uses each point's (μ, ν).
pub fn compute_metrics<T: Real>(pred: &[PredictiveSummary<T>], truth: &[T], train_var: T) -> Result<(T, T, T)> {
    if truth.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if pred.len() != truth.len() {
        return Err(dim_err(format!("{} predictions, {} targets", pred.len(), truth.len())));
    }
    if !(train_var > T::zero()) {
        return Err(Error::NonPositiveVariance(train_var.as_f64()));
    }
    let n = T::lit(truth.len() as f64);
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let (mut mae, mut se, mut nll) = (T::zero(), T::zero(), T::zero());
    for (p, &y) in pred.iter().zip(truth) {
        if !(p.var > T::zero()) {
            return Err(Error::NonPositiveVariance(p.var.as_f64()));
        }
        let r = p.mean - y;
        mae += r.abs();
        se += r * r;
        nll += T::lit(0.5) * (r * r / p.var + (two_pi * p.var).ln());
    }
    Ok((mae / n, se / n / train_var, nll / n))
}
