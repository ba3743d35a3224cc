use std::fmt::Write as _;

use crate::error::{contract, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Empty matrix over `labels`.
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(contract("a confusion matrix needs at least one class"));
        }
        let n = labels.len();
        Ok(Self {
            labels,
            counts: vec![vec![0; n]; n],
        })
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 || counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(contract(
                "confusion counts must be a square matrix matching the labels",
            ));
        }
        Ok(Self { labels, counts })
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.trace() as f64 / t as f64
        }
    }

    /// Row-normalized rates; rows without samples are all zero.
    pub fn row_rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.classes();
        if truth >= n || predicted >= n {
            return Err(contract(format!(
                "label pair ({truth}, {predicted}) outside {n} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Counts and row percentages as an aligned text table.
    pub fn render(&self) -> String {
        let w = self
            .labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(10);
        let mut s = format!("{:w$}", "true\\pred");
        for l in &self.labels {
            write!(s, "  {l:>w$}").expect("string write");
        }
        s.push('\n');
        for (l, (row, rates)) in self
            .labels
            .iter()
            .zip(self.counts.iter().zip(self.row_rates()))
        {
            write!(s, "{l:w$}").expect("string write");
            for (c, r) in row.iter().zip(rates) {
                let cell = format!("{c} ({:.1}%)", 100.0 * r);
                write!(s, "  {cell:>w$}").expect("string write");
            }
            s.push('\n');
        }
        s
    }
}

/// Builds a matrix over `max(label) + 1` classes named by index.
pub fn confusion_matrix(predictions: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(contract(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(contract("confusion matrix needs at least one sample"));
    }
    let n = predictions.iter().chain(truths).max().map_or(0, |m| m + 1);
    let mut cm = ConfusionMatrix::new((0..n).map(|i| i.to_string()).collect())?;
    for (&p, &t) in predictions.iter().zip(truths) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the class was never predicted (precision reported as 0).
    pub precision_defined: bool,
    /// False when the class never occurs in the truths (recall reported as 0).
    pub recall_defined: bool,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Metrics {
    let n = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|k| {
            let tp = cm.count(k, k);
            let predicted: u64 = (0..n).map(|t| cm.count(t, k)).sum();
            let support: u64 = cm.counts()[k].iter().sum();
            let (precision, precision_defined) = ratio(tp, predicted);
            let (recall, recall_defined) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                precision_defined,
                recall_defined,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / n as f64;
    Metrics {
        per_class,
        accuracy: cm.accuracy(),
        macro_f1,
    }
}

impl Metrics {
    pub fn render(&self, labels: &[String]) -> String {
        let mut s = String::from("class\tprecision\trecall\tf1\tsupport\n");
        for (l, c) in labels.iter().zip(&self.per_class) {
            writeln!(
                s,
                "{l}\t{:.4}\t{:.4}\t{:.4}\t{}",
                c.precision, c.recall, c.f1, c.support
            )
            .expect("string write");
        }
        writeln!(s, "accuracy\t{:.4}", self.accuracy).expect("string write");
        writeln!(s, "macro_f1\t{:.4}", self.macro_f1).expect("string write");
        s
    }
}
