use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{FlstError, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Batch-mean loss and its gradient w.r.t. `predictions`.
///
/// Cross-entropy expects row-stochastic predictions (softmax outputs) and
/// one-hot (or otherwise row-stochastic) targets. MSE averages over every entry.
pub fn loss_eval(kind: LossKind, predictions: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if predictions.shape() != targets.shape() {
        return Err(FlstError::shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if predictions.rows() == 0 {
        return Err(FlstError::shape("empty batch"));
    }
    let batch = predictions.rows() as f64;
    let mut grad = Matrix::zeros(predictions.rows(), predictions.cols());
    let loss = match kind {
        LossKind::CrossEntropy => {
            for (r, (p, t)) in predictions.row_iter().zip(targets.row_iter()).enumerate() {
                check_stochastic(p, "prediction", r)?;
                check_stochastic(t, "target", r)?;
            }
            let mut total = 0.0;
            for (g, (&p, &t)) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(predictions.as_slice().iter().zip(targets.as_slice()))
            {
                if t != 0.0 {
                    let clamped = p.clamp(PROB_FLOOR, 1.0);
                    total -= t * clamped.ln();
                    *g = -t / clamped / batch;
                }
            }
            total / batch
        }
        LossKind::Mse => {
            let n = (predictions.rows() * predictions.cols()) as f64;
            let mut total = 0.0;
            for (g, (&p, &t)) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(predictions.as_slice().iter().zip(targets.as_slice()))
            {
                let d = p - t;
                total += d * d;
                *g = 2.0 * d / n;
            }
            total / n
        }
    };
    if !loss.is_finite() {
        return Err(FlstError::numeric("loss is not finite"));
    }
    Ok((loss.max(0.0), grad))
}

fn check_stochastic(row: &[f64], what: &str, r: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(FlstError::Validation(format!(
            "{} row {} is not a probability vector (sum {})",
            what, r, sum
        )));
    }
    Ok(())
}

/// Per-row cross-entropy with the same clamping as [`loss_eval`]; no validation.
pub fn cross_entropy_rows(probs: &Matrix, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs.get(r, y).clamp(PROB_FLOOR, 1.0).ln())
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &y) in labels.iter().enumerate() {
        m.set(r, y, 1.0);
    }
    m
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(probs)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_one_hot_prediction_costs_nothing() {
        let p = Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        let (loss, _) = loss_eval(LossKind::CrossEntropy, &p, &p).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln_classes() {
        let p = Matrix::from_rows(&[[0.1; 10]]).unwrap();
        let t = one_hot(&[3], 10);
        let (loss, grad) = loss_eval(LossKind::CrossEntropy, &p, &t).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
        assert_eq!(grad.shape(), (1, 10));
    }

    #[test]
    fn mse_identity_is_zero() {
        let p = Matrix::from_rows(&[[0.3, -2.0], [1.5, 4.0]]).unwrap();
        let (loss, grad) = loss_eval(LossKind::Mse, &p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unnormalized_rows_fail_validation() {
        let p = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        let t = one_hot(&[0], 2);
        assert!(matches!(
            loss_eval(LossKind::CrossEntropy, &p, &t),
            Err(FlstError::Validation(_))
        ));
    }

    #[test]
    fn loss_is_batch_mean() {
        let p = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let t = one_hot(&[0, 1], 2);
        let (loss, grad) = loss_eval(LossKind::CrossEntropy, &p, &t).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert!((grad.get(0, 0) + 1.0).abs() < 1e-12);
    }
}
