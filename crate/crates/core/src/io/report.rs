use std::path::Path;

use serde::Serialize;

use super::write_text;
use crate::error::Result;

/// Accuracy metrics of a fit; metrics that were not requested are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dsc: Option<f64>,
    pub surface_avg: Option<f64>,
    pub surface_max: Option<f64>,
    pub vertex_rmse: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics are finite")
    }
}

pub fn save_report(report: &MetricsReport, path: &Path) -> Result<()> {
    write_text(path, &report.to_json())
}
