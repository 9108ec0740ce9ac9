//! Report persistence and cross-report summaries.
//!
//! Reports are saved as pretty JSON and summarized as one CSV row per run in
//! the shape: run label, one share column per factor, unexplained, total.
//! Numbers are written with the shortest round-trip `Display` form, so a
//! re-parsed row reproduces the report values bit for bit.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::shapley::AttributionReport;

/// Totals smaller than this are treated as no disparity to explain; the
/// explained fraction is undefined rather than a ratio of noise.
pub const FRACTION_FLOOR: f64 = 1e-3;

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read report {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Malformed {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("report {path} has schema version {found}, this build reads {expected}")]
    SchemaVersion {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("csv rendering failed: {0}")]
    Render(#[from] csv::Error),
}

pub fn save_report(report: &AttributionReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let unwritable = |source| ReportError::Unwritable {
        path: path.display().to_string(),
        source,
    };
    let mut text = serde_json::to_string_pretty(report).map_err(|e| ReportError::Malformed {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(unwritable)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<AttributionReport, ReportError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Unreadable {
        path: display.clone(),
        source,
    })?;
    let report: AttributionReport =
        serde_json::from_str(&text).map_err(|source| ReportError::Malformed {
            path: display.clone(),
            source,
        })?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(ReportError::SchemaVersion {
            path: display,
            found: report.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(report)
}

/// "reference on external", the label a run goes by in tables and bars.
pub fn run_label(report: &AttributionReport) -> String {
    format!("{} on {}", report.reference_site, report.external_site)
}

/// Header plus one row per report: run label, each factor's share,
/// unexplained, total. All reports must list the same factors in the same
/// order, which holds for rows produced by one configuration.
pub fn csv_summary(reports: &[AttributionReport]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<&str> = reports
        .first()
        .map(|r| r.factors.iter().map(|f| f.name.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["run".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    header.push("unexplained".to_string());
    header.push("total".to_string());
    w.write_record(&header)?;
    for report in reports {
        let mut row = vec![run_label(report)];
        for factor in &report.factors {
            row.push(format!("{}", factor.phi));
        }
        row.push(format!("{}", report.unexplained));
        row.push(format!("{}", report.total_disparity));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().expect("csv buffer");
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

/// The explained-fraction view of one report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub label: String,
    pub total: f64,
    pub explained: f64,
    pub unexplained: f64,
    /// explained / total, or `None` when |total| < [`FRACTION_FLOOR`].
    pub explained_fraction: Option<f64>,
}

pub fn summarize(report: &AttributionReport) -> ReportSummary {
    let fraction = if report.total_disparity.abs() < FRACTION_FLOOR {
        None
    } else {
        Some(report.explained / report.total_disparity)
    };
    ReportSummary {
        label: run_label(report),
        total: report.total_disparity,
        explained: report.explained,
        unexplained: report.unexplained,
        explained_fraction: fraction,
    }
}

/// Per-report summaries plus the mean and max fraction over the reports
/// where a fraction is defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryStats {
    pub summaries: Vec<ReportSummary>,
    pub mean_fraction: Option<f64>,
    pub max_fraction: Option<f64>,
}

pub fn summarize_all(reports: &[AttributionReport]) -> SummaryStats {
    let summaries: Vec<ReportSummary> = reports.iter().map(summarize).collect();
    let defined: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.explained_fraction)
        .collect();
    let mean_fraction = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let max_fraction = defined.iter().copied().reduce(f64::max);
    SummaryStats {
        summaries,
        mean_fraction,
        max_fraction,
    }
}
