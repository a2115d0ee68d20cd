//! Accuracy and macro-F1 over class indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    MacroF1,
}

impl MetricKind {
    pub fn compute(self, preds: &[usize], golds: &[usize], n_classes: usize) -> f64 {
        match self {
            MetricKind::Accuracy => accuracy(preds, golds),
            MetricKind::MacroF1 => macro_f1(preds, golds, n_classes),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MacroF1 => "macro_f1",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "macro_f1" | "macro-f1" | "f1" => Ok(MetricKind::MacroF1),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn metrics(preds: &[usize], golds: &[usize], n_classes: usize) -> Metrics {
    Metrics {
        accuracy: accuracy(preds, golds),
        macro_f1: macro_f1(preds, golds, n_classes),
    }
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> f64 {
    assert_eq!(preds.len(), golds.len(), "prediction/gold length");
    assert!(!preds.is_empty(), "metrics over an empty set");
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    correct as f64 / preds.len() as f64
}

/// Unweighted mean of per-class F1 over all `n_classes` classes. A class
/// with no true positives (including one absent from both sides) scores 0.
pub fn macro_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> f64 {
    assert_eq!(preds.len(), golds.len(), "prediction/gold length");
    assert!(!preds.is_empty(), "metrics over an empty set");
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut gold_count = vec![0usize; n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let denom = pred_count[c] + gold_count[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    total / n_classes as f64
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct() {
        let g = [0, 1, 2, 1];
        let m = metrics(&g, &g, 3);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor_binary() {
        let preds = [0, 0, 0, 0];
        let golds = [0, 0, 1, 1];
        let m = metrics(&preds, &golds, 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    /// F1 per class from the full confusion matrix, computed as
    /// 2PR/(P+R) with precision and recall taken separately.
    fn confusion_oracle(preds: &[usize], golds: &[usize], c: usize) -> f64 {
        let mut cm = vec![vec![0usize; c]; c];
        for (&p, &g) in preds.iter().zip(golds) {
            cm[g][p] += 1;
        }
        let mut sum = 0.0;
        for (k, row) in cm.iter().enumerate() {
            let tp = row[k] as f64;
            let col: usize = cm.iter().map(|r| r[k]).sum();
            let row: usize = row.iter().sum();
            let precision = if col == 0 { 0.0 } else { tp / col as f64 };
            let recall = if row == 0 { 0.0 } else { tp / row as f64 };
            sum += if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
        }
        sum / c as f64
    }

    #[test]
    fn three_class_against_confusion_oracle() {
        let golds = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 0, 1];
        let preds = [0, 1, 2, 1, 1, 0, 2, 2, 1, 2, 0, 2];
        let got = macro_f1(&preds, &golds, 3);
        assert!((got - confusion_oracle(&preds, &golds, 3)).abs() < 1e-12);
        // class 2 never predicted nor gold in a 4-class task
        let got = macro_f1(&preds, &golds, 4);
        assert!((got - confusion_oracle(&preds, &golds, 4)).abs() < 1e-12);
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn metric_kind_parse() {
        assert_eq!("accuracy".parse::<MetricKind>().unwrap(), MetricKind::Accuracy);
        assert_eq!("macro_f1".parse::<MetricKind>().unwrap(), MetricKind::MacroF1);
        assert!("bleu".parse::<MetricKind>().is_err());
    }
}
