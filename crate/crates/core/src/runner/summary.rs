use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::entropy;
use crate::error::Result;
use crate::federation::{read_metrics, MetricsRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_iteration: Option<u64>,
    pub final_window: usize,
    pub mean_scheduler_entropy: f64,
    pub selection_frequencies: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

/// Aggregates a metrics stream; frequencies and entropy use the last `final_window` rows.
pub fn summarize_rows(rows: &[MetricsRow], node_count: usize, final_window: usize) -> RunSummary {
    let tail = &rows[rows.len().saturating_sub(final_window.max(1))..];
    let mut counts = vec![0usize; node_count];
    for r in tail {
        for &s in &r.selected {
            counts[s] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let selection_frequencies = if total == 0 {
        vec![0.0; node_count]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    let mean_scheduler_entropy = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|r| entropy(&r.probabilities)).sum::<f64>() / tail.len() as f64
    };
    let evaluated: Vec<(u64, f64)> = rows
        .iter()
        .filter_map(|r| r.test_accuracy.map(|a| (r.iteration, a)))
        .collect();
    let best = evaluated
        .iter()
        .copied()
        .fold(None, |acc: Option<(u64, f64)>, (it, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((it, a)),
        });
    RunSummary {
        iterations: rows.len(),
        final_test_accuracy: evaluated.last().map(|e| e.1),
        final_auc: None,
        best_test_accuracy: best.map(|b| b.1),
        best_iteration: best.map(|b| b.0),
        final_window: tail.len(),
        mean_scheduler_entropy,
        selection_frequencies,
        wall_clock_seconds: None,
    }
}

/// Reads a metrics CSV and summarizes it.
pub fn emit_summary(path: &Path, final_window: usize) -> Result<(RunSummary, String)> {
    let (n, rows) = read_metrics(path)?;
    let summary = summarize_rows(&rows, n, final_window);
    let report = render_report(&summary);
    Ok((summary, report))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn render_report(s: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "iterations            {}", s.iterations);
    let _ = writeln!(out, "final test accuracy   {}", fmt_opt(s.final_test_accuracy));
    if s.final_auc.is_some() {
        let _ = writeln!(out, "final test AUC        {}", fmt_opt(s.final_auc));
    }
    let _ = writeln!(
        out,
        "best test accuracy    {} (iteration {})",
        fmt_opt(s.best_test_accuracy),
        s.best_iteration.map_or_else(|| "n/a".into(), |i| i.to_string())
    );
    let _ = writeln!(out, "final window          {} rows", s.final_window);
    let _ = writeln!(out, "mean scheduler entropy {:.4}", s.mean_scheduler_entropy);
    let freqs: Vec<String> = s
        .selection_frequencies
        .iter()
        .enumerate()
        .map(|(i, f)| format!("node {i}: {f:.3}"))
        .collect();
    let _ = writeln!(out, "selection frequencies {}", freqs.join(", "));
    if let Some(w) = s.wall_clock_seconds {
        let _ = writeln!(out, "wall clock            {w:.1} s");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(it: u64, sel: usize, acc: Option<f64>) -> MetricsRow {
        MetricsRow {
            iteration: it,
            probabilities: vec![0.2, 0.3, 0.5],
            selected: vec![sel],
            test_accuracy: acc,
            validation_accuracy: vec![None; 3],
            ..MetricsRow::default()
        }
    }

    #[test]
    fn single_row_identity() {
        let s = summarize_rows(&[row(0, 1, Some(0.7))], 3, 10);
        assert_eq!(s.final_test_accuracy, Some(0.7));
        assert_eq!(s.best_test_accuracy, Some(0.7));
        assert_eq!(s.best_iteration, Some(0));
        assert_eq!(s.selection_frequencies, vec![0.0, 1.0, 0.0]);
        assert!((s.mean_scheduler_entropy - entropy(&[0.2, 0.3, 0.5])).abs() < 1e-15);
    }

    #[test]
    fn counting_and_normalization() {
        let rows: Vec<MetricsRow> = (0..50).map(|i| row(i, 2, None)).collect();
        let s = summarize_rows(&rows, 3, 20);
        assert_eq!(s.selection_frequencies, vec![0.0, 0.0, 1.0]);
        let mixed: Vec<MetricsRow> = (0..37).map(|i| row(i, (i % 3) as usize, Some(i as f64 / 100.0))).collect();
        let s = summarize_rows(&mixed, 3, 30);
        assert!((s.selection_frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.best_iteration, Some(36));
        assert_eq!(s.final_window, 30);
    }
}
