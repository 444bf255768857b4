//! Flat JSON metric reports with fixed 6-decimal values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// `{"name": value}` with keys sorted and every value printed as `{:.6}`.
pub fn format_report(metrics: &BTreeMap<String, f64>) -> Result<String> {
    let mut out = String::from("{\n");
    for (i, (k, v)) in metrics.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Contract(format!("metric {k} is not finite")));
        }
        let key = serde_json::to_string(k).expect("strings serialize");
        let v = if *v == 0.0 { 0.0 } else { *v };
        out.push_str(&format!("  {key}: {v:.6}"));
        out.push_str(if i + 1 < metrics.len() { ",\n" } else { "\n" });
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn write_report(path: &Path, metrics: &BTreeMap<String, f64>) -> Result<()> {
    std::fs::write(path, format_report(metrics)?).map_err(|e| Error::io(path, e))
}

pub fn parse_report(text: &str) -> Result<BTreeMap<String, f64>> {
    serde_json::from_str(text).map_err(|e| Error::Format { offset: 0, message: format!("report: {e}") })
}
