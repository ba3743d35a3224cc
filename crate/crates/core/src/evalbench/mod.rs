//! Classification metrics, feature export, latency benchmarks and
//! device-performance reports.

mod bench;
mod metrics;

pub use bench::{
    benchmark, budget_check, percentile, render_table, render_tsv, BenchReport, BudgetCheck,
    DeviceRow,
};
pub use metrics::{
    classification_metrics, confusion_matrix, ClassMetrics, ConfusionMatrix, Metrics,
};

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::graph::ModelGraph;
use crate::quantizer::LabeledImage;
use crate::trainer::{extract_features, FeatureMatrix};

/// Tab-separated feature table: a header, then one row per image holding
/// the label and the penultimate feature vector.
pub fn features_tsv(features: &FeatureMatrix<f32>, labels: &[usize]) -> String {
    let mut s = String::from("label");
    for i in 0..features.dim() {
        write!(s, "\tf{i}").expect("string write");
    }
    s.push('\n');
    for (row, label) in features.iter().zip(labels) {
        write!(s, "{label}").expect("string write");
        for v in row {
            write!(s, "\t{v}").expect("string write");
        }
        s.push('\n');
    }
    s
}

/// Extracts features for every image and writes them as a TSV table.
pub fn export_features(
    g: &ModelGraph,
    data: &[LabeledImage],
    path: impl AsRef<Path>,
) -> Result<FeatureMatrix<f32>> {
    let images: Vec<_> = data.iter().map(|d| d.image.clone()).collect();
    let features = extract_features(g, &images)?;
    let labels: Vec<usize> = data.iter().map(|d| d.label).collect();
    std::fs::write(path, features_tsv(&features, &labels))?;
    Ok(features)
}
