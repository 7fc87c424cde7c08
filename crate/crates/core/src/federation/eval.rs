use crate::error::{FlstError, Result};
use crate::nn::{argmax_rows, cross_entropy_rows, Matrix, Mlp};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Present for two-class tasks only.
    pub auc: Option<f64>,
    pub mean_loss: f64,
}

/// Accuracy, mean cross-entropy and (binary tasks) AUC of a classifier.
pub fn evaluate(student: &Mlp, inputs: &Matrix, labels: &[usize]) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(FlstError::config("evaluation set is empty"));
    }
    if inputs.rows() != labels.len() {
        return Err(FlstError::shape(format!(
            "{} inputs but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let probs = student.predict(inputs)?;
    let accuracy = accuracy_of(&argmax_rows(&probs), labels);
    let losses = cross_entropy_rows(&probs, labels);
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let auc = if probs.cols() == 2 {
        let scores: Vec<f64> = probs.row_iter().map(|r| r[1]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        auc_rank(&scores, &positives).ok()
    } else {
        None
    };
    Ok(Evaluation {
        accuracy,
        auc,
        mean_loss,
    })
}

pub fn accuracy_of(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Mann-Whitney estimate of the ROC AUC; ties count one half.
pub fn auc_rank(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(FlstError::shape("scores and labels differ in length"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(FlstError::config("AUC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUC of a binary classifier on a labelled set; configuration error for more classes.
pub fn binary_auc(student: &Mlp, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if student.output_dim() != 2 {
        return Err(FlstError::config(format!(
            "AUC is defined for two classes, the student has {}",
            student.output_dim()
        )));
    }
    let probs = student.predict(inputs)?;
    let scores: Vec<f64> = probs.row_iter().map(|r| r[1]).collect();
    let positives: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    auc_rank(&scores, &positives)
}
