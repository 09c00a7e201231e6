//! Box-plot statistics over replicate columns.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::statistics::{Data, Distribution, Max, Min, OrderStatistics};

/// Five-number summary plus mean and standard deviation. Quartiles use the
/// median-unbiased interpolation of `statrs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: Option<f64>,
}

/// `None` when no finite value is present.
pub fn summarize(values: &[f64]) -> Option<ColumnSummary> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    let count = finite.len();
    let mut data = Data::new(finite);
    Some(ColumnSummary {
        count,
        min: data.min(),
        q1: data.lower_quartile(),
        median: data.median(),
        q3: data.upper_quartile(),
        max: data.max(),
        mean: data.mean().unwrap_or(f64::NAN),
        sd: if count > 1 { data.std_dev() } else { None },
    })
}

/// Summaries of named columns, skipping columns without data.
pub fn summarize_columns(columns: &[(String, Vec<f64>)]) -> BTreeMap<String, ColumnSummary> {
    columns.iter().filter_map(|(name, vals)| summarize(vals).map(|s| (name.clone(), s))).collect()
}
