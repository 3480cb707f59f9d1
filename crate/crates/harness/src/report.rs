//! Report serialization.

use std::fmt::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::run::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    /// Pretty-printed JSON with the configuration echo and summary.
    Structured,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsupported report format `{0}` (expected csv or structured)")]
pub struct UnsupportedFormat(pub String);

impl FromStr for Format {
    type Err = UnsupportedFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "structured" | "json" => Ok(Format::Structured),
            other => Err(UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["step".to_string(), "method".to_string()];
    cols.extend((0..n).map(|i| format!("t{i}")));
    cols.extend((0..n).map(|i| format!("m{i}")));
    cols.extend(
        ["err_norm", "constraint_residual", "cov_min_eig", "cov_asym"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Floats use Rust's shortest round-trip formatting, so output is byte-stable.
pub fn to_csv(report: &RunReport) -> String {
    let mut out = csv_header(report.state_dim);
    out.push('\n');
    for r in &report.records {
        write!(out, "{},{}", r.step, r.method).unwrap();
        for v in r.truth.iter().chain(&r.mean) {
            write!(out, ",{v}").unwrap();
        }
        writeln!(
            out,
            ",{},{},{},{}",
            r.err_norm, r.constraint_residual, r.cov_min_eig, r.cov_asym
        )
        .unwrap();
    }
    out
}

pub fn emit_report(report: &RunReport, format: Format) -> String {
    match format {
        Format::Csv => to_csv(report),
        Format::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}
