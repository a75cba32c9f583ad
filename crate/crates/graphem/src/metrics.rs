//! Evaluation of estimated transition matrices against ground truth:
//! Frobenius-relative error and confusion-matrix scores on the edge pattern.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Magnitudes at or below this do not count as graph edges.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-10;

/// Confusion-matrix scores over the `n_x^2` entries of a transition matrix,
/// treating `|entry| > threshold` as a directed edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScores {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EdgeScores {
    fn from_counts(tp: usize, fp: usize, tn: usize, fn_count: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EdgeScores {
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fn_count,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_count),
            precision,
            recall,
            specificity: ratio(tn, tn + fp),
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Frobenius-relative error `||A_hat - A_true||_F / ||A_true||_F`.
pub fn rmse(a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<f64> {
    if a_hat.shape() != a_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            a_hat.shape(),
            a_true.shape()
        )));
    }
    let denom = a_true.norm();
    if denom == 0.0 {
        return Err(Error::Degenerate("true matrix is all-zero, relative error undefined".into()));
    }
    Ok((a_hat - a_true).norm() / denom)
}

/// Edge-detection scores of `a_hat` against `a_true` at the given magnitude
/// threshold (both matrices thresholded the same way).
pub fn edge_scores(
    a_hat: &DMatrix<f64>,
    a_true: &DMatrix<f64>,
    threshold: f64,
) -> Result<EdgeScores> {
    if a_hat.shape() != a_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            a_hat.shape(),
            a_true.shape()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_count) = (0, 0, 0, 0);
    for (est, truth) in a_hat.iter().zip(a_true.iter()) {
        match (est.abs() > threshold, truth.abs() > threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_count += 1,
        }
    }
    Ok(EdgeScores::from_counts(tp, fp, tn, fn_count))
}

/// Number of entries with magnitude above the threshold.
pub fn count_edges(a: &DMatrix<f64>, threshold: f64) -> usize {
    a.iter().filter(|v| v.abs() > threshold).count()
}

/// Mean and sample standard deviation of one metric across realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_and_std(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::Degenerate("cannot aggregate an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MetricSummary { mean, std })
}

/// Per-realization evaluation of one fitted matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub rmse: f64,
    pub edges: EdgeScores,
}

/// Mean/std of every metric across a set of realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateReport {
    pub rmse: MetricSummary,
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub specificity: MetricSummary,
    pub f1: MetricSummary,
}

pub fn aggregate(records: &[EvalRecord]) -> Result<AggregateReport> {
    let pull = |f: fn(&EvalRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    Ok(AggregateReport {
        rmse: mean_and_std(&pull(|r| r.rmse))?,
        accuracy: mean_and_std(&pull(|r| r.edges.accuracy))?,
        precision: mean_and_std(&pull(|r| r.edges.precision))?,
        recall: mean_and_std(&pull(|r| r.edges.recall))?,
        specificity: mean_and_std(&pull(|r| r.edges.specificity))?,
        f1: mean_and_std(&pull(|r| r.edges.f1))?,
    })
}
