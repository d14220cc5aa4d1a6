use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch {
                expected: format!("{k}x{k}"),
                got: "ragged rows".into(),
            });
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Row sum: number of samples whose true class is `i`.
    pub fn support(&self, i: usize) -> u64 {
        (0..self.k).map(|j| self.get(i, j)).sum()
    }

    /// Column sum: number of samples predicted as `j`.
    pub fn predicted(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(|r| r.to_vec()).collect()
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: truths.len() });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truths) {
        for idx in [p, t] {
            if idx >= k {
                return Err(Error::ClassOutOfRange { index: idx, classes: k });
            }
        }
        cm.counts[t * k + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes with nonzero support.
    Macro,
    /// Support-weighted mean.
    #[default]
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Per-class precision, recall and F1; zero denominators give 0.
pub fn per_class(cm: &ConfusionMatrix) -> Vec<(f64, f64, f64)> {
    (0..cm.classes())
        .map(|i| {
            let tp = cm.get(i, i) as f64;
            let pred = cm.predicted(i) as f64;
            let sup = cm.support(i) as f64;
            let p = if pred > 0.0 { tp / pred } else { 0.0 };
            let r = if sup > 0.0 { tp / sup } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        })
        .collect()
}

pub fn metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let classes = per_class(cm);
    let weights: Vec<f64> = (0..cm.classes())
        .map(|i| {
            let sup = cm.support(i);
            match averaging {
                Averaging::Weighted => sup as f64 / total as f64,
                Averaging::Macro => (sup > 0) as u8 as f64,
            }
        })
        .collect();
    let norm: f64 = weights.iter().sum();
    let avg = |f: fn(&(f64, f64, f64)) -> f64| {
        classes.iter().zip(&weights).map(|(c, w)| w * f(c)).sum::<f64>() / norm
    };
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: avg(|c| c.0),
        recall: avg(|c| c.1),
        f1: avg(|c| c.2),
    })
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub training_dataset: String,
    pub metrics: Metrics,
}

impl MetricsRow {
    pub fn new(method: impl Into<String>, training_dataset: impl Into<String>, metrics: Metrics) -> Self {
        Self { method: method.into(), training_dataset: training_dataset.into(), metrics }
    }

    /// `method,training_dataset,accuracy,recall,precision,f1` with three decimals.
    pub fn to_csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{:.3},{:.3},{:.3},{:.3}",
            csv_field(&self.method),
            csv_field(&self.training_dataset),
            m.accuracy,
            m.recall,
            m.precision,
            m.f1
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const REPORT_HEADER: &str = "method,training_dataset,accuracy,recall,precision,f1";

pub fn report_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.to_csv_line());
    }
    out
}

/// Component-wise mean of several metric sets.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len().max(1) as f64;
    let sum = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    Metrics {
        accuracy: sum(|m| m.accuracy),
        recall: sum(|m| m.recall),
        precision: sum(|m| m.precision),
        f1: sum(|m| m.f1),
    }
}
