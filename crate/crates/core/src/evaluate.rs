//! Confusion matrices, classification metrics and run aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts with rows = true class and columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
            labels: (0..n_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::invalid(format!(
                "cannot merge {}-class and {}-class confusion matrices",
                self.n_classes(),
                other.n_classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_matrix",
            left: vec![predictions.len()],
            right: vec![labels.len()],
        });
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (i, (&p, &t)) in predictions.iter().zip(labels).enumerate() {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!(
                "sample {i}: label {t} / prediction {p} out of range for {n_classes} classes"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Unweighted mean F1 over classes with non-zero support.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    pub total: u64,
    /// Set when the matrix is empty and nothing could be measured.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricReport {
    let n = cm.n_classes();
    let total = cm.total();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let support = cm.support(c);
        let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let tn = total - tp - fp - fn_;
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            support,
            precision_undefined,
            recall_undefined,
        });
    }
    let trace: u64 = (0..n).map(|c| cm.counts[c][c]).sum();
    let (accuracy, undefined) = ratio(trace, total);
    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_f1 = if supported.is_empty() {
        0.0
    } else {
        supported.iter().map(|m| m.f1).sum::<f64>() / supported.len() as f64
    };
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
    };
    MetricReport {
        per_class,
        accuracy,
        macro_f1,
        weighted_f1,
        total,
        undefined,
    }
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,tp,fp,fn,tn,precision,recall,f1\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{c},{},{},{},{},{},{:.6},{:.6},{:.6}",
                m.support, m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1
            );
        }
        let _ = writeln!(out, "accuracy,{},,,,,,,{:.6}", self.total, self.accuracy);
        let _ = writeln!(out, "macro_f1,{},,,,,,,{:.6}", self.total, self.macro_f1);
        let _ = writeln!(out, "weighted_f1,{},,,,,,,{:.6}", self.total, self.weighted_f1);
        out
    }
}

/// Mean and standard error of per-run scores: the population standard
/// deviation divided by `√q`.
pub fn standard_error(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::invalid("standard error of zero runs"));
    }
    let q = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / q;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / q;
    Ok((mean, var.sqrt() / q.sqrt()))
}
