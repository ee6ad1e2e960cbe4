//! Accuracy, macro sensitivity, macro specificity and penalty-weighted
//! error over confusion matrices.
//!
//! Rows index the true class and columns the predicted class, so `X[i][j]`
//! counts samples of class `i` predicted as `j`.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::contract(format!(
                "confusion matrix needs at least 2 classes, got {}",
                labels.len()
            )));
        }
        let k = labels.len();
        Ok(ConfusionMatrix {
            labels,
            counts: vec![0; k * k],
        })
    }

    /// Builds a matrix from rows of counts, `rows[true][predicted]`.
    pub fn from_rows(labels: Vec<String>, rows: &[Vec<u64>]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(labels)?;
        let k = cm.k();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::contract(format!(
                "confusion matrix rows must be {k}x{k}"
            )));
        }
        cm.counts = rows.concat();
        Ok(cm)
    }

    pub fn from_predictions(
        labels: Vec<String>,
        truth: &[usize],
        predicted: &[usize],
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(labels)?;
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.k();
        if truth >= k || predicted >= k {
            return Err(Error::contract(format!(
                "class index ({truth}, {predicted}) outside [0, {k})"
            )));
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.k()).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k()).map(|i| self.get(i, j)).sum()
    }

    fn nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::contract("metric of an empty confusion matrix")),
            n => Ok(n),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.nonempty()?;
        let tp: u64 = (0..self.k()).map(|i| self.get(i, i)).sum();
        Ok(tp as f64 / n as f64)
    }

    /// Per-class recall `TP / (TP + FN)`.
    pub fn per_class_sensitivity(&self) -> Result<Vec<f64>> {
        self.nonempty()?;
        (0..self.k())
            .map(|i| match self.row_sum(i) {
                0 => Err(Error::UndefinedClass {
                    class: self.labels[i].clone(),
                    what: "true",
                }),
                p => Ok(self.get(i, i) as f64 / p as f64),
            })
            .collect()
    }

    /// Per-class true-negative rate `TN / (TN + FP)`.
    pub fn per_class_specificity(&self) -> Result<Vec<f64>> {
        let n = self.nonempty()?;
        (0..self.k())
            .map(|i| {
                let negatives = n - self.row_sum(i);
                if negatives == 0 {
                    return Err(Error::UndefinedClass {
                        class: self.labels[i].clone(),
                        what: "negative",
                    });
                }
                let fp = self.col_sum(i) - self.get(i, i);
                Ok((negatives - fp) as f64 / negatives as f64)
            })
            .collect()
    }

    pub fn sensitivity(&self) -> Result<f64> {
        Ok(mean(&self.per_class_sensitivity()?))
    }

    pub fn specificity(&self) -> Result<f64> {
        Ok(mean(&self.per_class_specificity()?))
    }

    /// `Σ W_ij X_ij / N`, in percent.
    pub fn weighted_error(&self, penalties: &PenaltyMatrix) -> Result<f64> {
        if penalties.k() != self.k() {
            return Err(Error::contract(format!(
                "penalty matrix is {0}x{0} but confusion matrix is {1}x{1}",
                penalties.k(),
                self.k()
            )));
        }
        let n = self.nonempty()?;
        let k = self.k();
        let cost: f64 = (0..k * k)
            .map(|ij| penalties.weights[ij] * self.counts[ij] as f64)
            .sum();
        Ok(100.0 * cost / n as f64)
    }

    /// Accuracy, sensitivity and specificity in percent, plus weighted error
    /// when penalties are given.
    pub fn summary(&self, penalties: Option<&PenaltyMatrix>) -> Result<String> {
        let mut out = String::new();
        writeln!(out, "accuracy    : {:.2}%", 100.0 * self.accuracy()?).unwrap();
        match self.sensitivity() {
            Ok(s) => writeln!(out, "sensitivity : {:.2}%", 100.0 * s).unwrap(),
            Err(e) => writeln!(out, "sensitivity : undefined ({e})").unwrap(),
        }
        match self.specificity() {
            Ok(s) => writeln!(out, "specificity : {:.2}%", 100.0 * s).unwrap(),
            Err(e) => writeln!(out, "specificity : undefined ({e})").unwrap(),
        }
        if let Some(w) = penalties {
            writeln!(out, "weighted err: {:.2}%", self.weighted_error(w)?).unwrap();
        }
        Ok(out)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(0)
            .max(6);
        write!(f, "{:>width$}", "true\\pred")?;
        for l in &self.labels {
            write!(f, " {l:>width$}")?;
        }
        writeln!(f)?;
        for (i, l) in self.labels.iter().enumerate() {
            write!(f, "{l:>width$}")?;
            for j in 0..self.k() {
                write!(f, " {:>width$}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Misclassification costs, `W[true][predicted]`, zero on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyMatrix {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl PenaltyMatrix {
    pub fn new(labels: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = labels.len();
        if k < 2 || rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::contract(format!(
                "penalty matrix must be KxK with K = {k} >= 2"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(Error::contract(format!(
                    "penalty diagonal for `{}` must be 0",
                    labels[i]
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::contract(format!(
                    "penalties for `{}` must be finite and non-negative",
                    labels[i]
                )));
            }
        }
        Ok(PenaltyMatrix {
            labels,
            weights: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.weights[truth * self.k() + predicted]
    }

    /// Whitespace-separated grid: a header row of class names, then `K`
    /// rows of `K` weights. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::config("penalty file is empty"))?;
        let labels: Vec<String> = header.split_whitespace().map(str::to_string).collect();
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                line.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            Error::config(format!("penalty row {}: bad weight `{t}`", i + 1))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PenaltyMatrix::new(labels, &rows).map_err(|e| match e {
            Error::Contract(m) => Error::Config(m),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        PenaltyMatrix::parse(&std::fs::read_to_string(path)?)
    }

    /// Reorders to match `labels`, e.g. the class order of a dataset.
    pub fn aligned_to(&self, labels: &[String]) -> Result<Self> {
        let idx = labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|m| m.eq_ignore_ascii_case(l))
                    .ok_or_else(|| Error::config(format!("penalty matrix has no class `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if idx.len() != self.k() {
            return Err(Error::config(format!(
                "penalty matrix has {} classes, dataset has {}",
                self.k(),
                labels.len()
            )));
        }
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        PenaltyMatrix::new(labels.to_vec(), &rows)
    }
}

pub const OCT2017_CLASSES: [&str; 4] = ["NORMAL", "DRUSEN", "CNV", "DME"];

/// OCT2017 costs with class order Normal, Drusen, CNV, DME.
pub fn default_oct2017_penalties() -> PenaltyMatrix {
    let rows = [
        vec![0.0, 1.0, 1.0, 1.0],
        vec![1.0, 0.0, 1.0, 1.0],
        vec![4.0, 2.0, 0.0, 1.0],
        vec![4.0, 2.0, 1.0, 0.0],
    ];
    PenaltyMatrix::new(
        OCT2017_CLASSES.iter().map(|s| s.to_string()).collect(),
        &rows,
    )
    .expect("valid constant")
}
