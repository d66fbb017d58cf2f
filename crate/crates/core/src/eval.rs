//! Confusion-matrix metrics, regression summaries and reported-table checks.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {truth} labels, {pred} predictions")]
    Length { truth: usize, pred: usize },
    #[error("prediction {index} is {value}, outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("target {index} is {value}; targets must be finite and non-negative")]
    Target { index: usize, value: f64 },
    #[error("histogram needs at least one bin")]
    Bins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: u64,
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

/// `prob >= threshold` counts as a positive prediction.
pub fn classification_metrics(
    y_true: &[bool],
    y_prob: &[f64],
    threshold: f64,
) -> Result<ClassificationReport, EvalError> {
    if y_true.len() != y_prob.len() {
        return Err(EvalError::Length { truth: y_true.len(), pred: y_prob.len() });
    }
    if let Some((index, &value)) = y_prob.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::Probability { index, value });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&y, &p) in y_true.iter().zip(y_prob) {
        match (y, p >= threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let n = y_true.len() as u64;
    let ratio = |a: u64, b: u64| if b == 0 { (0.0, true) } else { (a as f64 / b as f64, false) };
    let (accuracy, _) = ratio(tp + tn, n);
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let (f1, f1_undefined) = f1_score(precision, recall);
    Ok(ClassificationReport {
        n,
        threshold,
        tp,
        fp,
        tn,
        fn_,
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    })
}

/// Harmonic mean; `(0, true)` when `p + r == 0`.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    }
}

/// Bin counts of predictions and targets over one shared range. Bin `k`
/// covers `[lo + (hi-lo)k/bins, lo + (hi-lo)(k+1)/bins)`; the last bin is
/// closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub predicted: Vec<u64>,
    pub actual: Vec<u64>,
}

impl Histogram {
    pub fn edge(&self, k: usize) -> f64 {
        bin_edge(self.lo, self.hi, self.predicted.len(), k)
    }
}

fn bin_edge(lo: f64, hi: f64, bins: usize, k: usize) -> f64 {
    if k == bins {
        hi
    } else {
        lo + (hi - lo) * (k as f64) / (bins as f64)
    }
}

fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &x in values {
        let guess = ((x - lo) / (hi - lo) * bins as f64).floor();
        let mut k = if guess < 0.0 { 0 } else { (guess as usize).min(bins - 1) };
        // Settle rounding at the boundaries against the exact edges.
        while k > 0 && x < bin_edge(lo, hi, bins, k) {
            k -= 1;
        }
        while k + 1 < bins && x >= bin_edge(lo, hi, bins, k + 1) {
            k += 1;
        }
        counts[k] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: u64,
    pub mse: f64,
    pub mae: f64,
    pub histogram: Histogram,
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64], bins: usize) -> Result<RegressionReport, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Length { truth: y_true.len(), pred: y_pred.len() });
    }
    if bins == 0 {
        return Err(EvalError::Bins);
    }
    if let Some((index, &value)) = y_true.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t >= 0.0)) {
        return Err(EvalError::Target { index, value });
    }
    if let Some((index, &value)) = y_pred.iter().enumerate().find(|(_, p)| !p.is_finite()) {
        return Err(EvalError::Probability { index, value });
    }
    let n = y_true.len();
    let denom = n.max(1) as f64;
    let mse = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / denom;
    let mae = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / denom;
    let all = y_true.iter().chain(y_pred);
    let mut lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let mut hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 0 {
        (lo, hi) = (0.0, 1.0);
    } else if hi <= lo {
        hi = lo + 1.0;
    }
    let histogram = Histogram {
        lo,
        hi,
        predicted: bin_counts(y_pred, lo, hi, bins),
        actual: bin_counts(y_true, lo, hi, bins),
    };
    Ok(RegressionReport { n: n as u64, mse, mae, histogram })
}

/// Full evaluation output written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub classification: Option<ClassificationReport>,
    pub regression: Option<RegressionReport>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// One line of a reported results table, two-decimal values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub const TABLE_TOLERANCE: f64 = 0.015;

/// Published results: gradient-boosted trees with graph features, then GAT
/// with 1, 3, 5, 10 and 30 layers.
pub const PUBLISHED_TABLE: [(&str, TableRow); 6] = [
    ("gbdt", TableRow { accuracy: 0.90, precision: 0.09, recall: 0.58, f1: 0.16 }),
    ("gat-1", TableRow { accuracy: 0.95, precision: 0.03, recall: 0.06, f1: 0.04 }),
    ("gat-3", TableRow { accuracy: 0.52, precision: 0.01, recall: 0.40, f1: 0.03 }),
    ("gat-5", TableRow { accuracy: 0.57, precision: 0.01, recall: 0.30, f1: 0.02 }),
    ("gat-10", TableRow { accuracy: 0.91, precision: 0.02, recall: 0.08, f1: 0.03 }),
    ("gat-30", TableRow { accuracy: 0.02, precision: 0.02, recall: 0.99, f1: 0.03 }),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyCheck {
    pub recomputed_f1: f64,
    pub deviation: f64,
    pub pass: bool,
}

/// Recompute F1 from each row's precision and recall and compare with the
/// reported F1 at [`TABLE_TOLERANCE`].
pub fn table_consistency(rows: &[TableRow]) -> Vec<ConsistencyCheck> {
    rows.iter()
        .map(|r| {
            let (recomputed_f1, _) = f1_score(r.precision, r.recall);
            let deviation = (recomputed_f1 - r.f1).abs();
            ConsistencyCheck { recomputed_f1, deviation, pass: deviation <= TABLE_TOLERANCE }
        })
        .collect()
}

/// `model,accuracy,precision,recall,f1` with two decimals.
pub fn write_table_row<W: Write>(model: &str, r: &ClassificationReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{model},{:.2},{:.2},{:.2},{:.2}", r.accuracy, r.precision, r.recall, r.f1)
}

pub const TABLE_HEADER: &str = "model,accuracy,precision,recall,f1";
