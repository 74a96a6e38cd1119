//! Confusion matrices, per-class and macro metrics, and the safety check.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::NUM_CLASSES;

/// Rows are true classes, columns are predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    /// Sums two partial matrices.
    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        let mut m = *self;
        for t in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                m.counts[t][p] += other.counts[t][p];
            }
        }
        m
    }

    pub fn support(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn predicted(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|p| self.counts.iter().map(|r| r[p]).sum())
    }

    pub fn total(&self) -> u64 {
        self.support().iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return invalid(format!("{} predictions for {} labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return invalid("no predictions");
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return invalid(format!("class out of range: pred {}, label {}", p, t));
        }
        m.add(t, p);
    }
    Ok(m)
}

/// Severe NPDR or PDR cases predicted as no DR.
pub fn critical_misdiagnosis_count(cm: &ConfusionMatrix) -> u64 {
    cm.counts[3][0] + cm.counts[4][0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub critical_misdiagnosis_count: u64,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Precision, recall and F1 per class (0 on an empty denominator), their
/// unweighted means, and accuracy.
pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return invalid("metrics of an empty confusion matrix");
    }
    let support = cm.support();
    let predicted = cm.predicted();
    let per_class: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|c| {
            let precision = ratio(cm.counts[c][c], predicted[c]);
            let recall = ratio(cm.counts[c][c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics { precision, recall, f1, support: support[c] }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    Ok(EvalReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: ratio(cm.trace(), total),
        critical_misdiagnosis_count: critical_misdiagnosis_count(cm),
        per_class,
        confusion: *cm,
    })
}

impl EvalReport {
    /// Matrix grid followed by a precision/recall/F1/support table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "confusion matrix (rows = true, cols = predicted)");
        let _ = write!(s, "{:>6}", "");
        for p in 0..NUM_CLASSES {
            let _ = write!(s, "{:>7}", p);
        }
        s.push('\n');
        for (t, row) in self.confusion.counts.iter().enumerate() {
            let _ = write!(s, "{:>6}", t);
            for v in row {
                let _ = write!(s, "{:>7}", v);
            }
            s.push('\n');
        }
        s.push('\n');
        let _ = writeln!(s, "{:>10} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support");
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = writeln!(s, "{:>10} {:>10.2} {:>10.2} {:>10.2} {:>10}", c, m.precision, m.recall, m.f1, m.support);
        }
        let total = self.confusion.total();
        s.push('\n');
        let _ = writeln!(s, "{:>10} {:>10} {:>10} {:>10.2} {:>10}", "accuracy", "", "", self.accuracy, total);
        let _ = writeln!(
            s,
            "{:>10} {:>10.2} {:>10.2} {:>10.2} {:>10}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1, total
        );
        let _ = writeln!(s, "\ncritical misdiagnoses (stage 3/4 -> 0): {}", self.critical_misdiagnosis_count);
        s
    }
}
