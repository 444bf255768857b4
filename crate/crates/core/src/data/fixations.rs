//! Fixation CSV files with header `frame,subject,x,y`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::FixationRecord;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    frame: usize,
    subject: u32,
    x: f64,
    y: f64,
}

pub fn parse_fixations(text: &str, n_frames: usize) -> Result<Vec<FixationRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err(&e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "subject", "x", "y"] {
        return Err(Error::Format { offset: 0, message: format!("fixation header must be frame,subject,x,y, got {headers:?}") });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| csv_err(&e))?;
        if row.frame >= n_frames {
            return Err(Error::Manifest(format!("fixation frame {} outside clip of {n_frames} frames", row.frame)));
        }
        out.push(FixationRecord::new(row.frame, row.subject, row.x, row.y)?);
    }
    Ok(out)
}

fn csv_err(e: &csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format { offset, message: format!("fixation CSV: {e}") }
}

pub fn read_fixations(path: &Path, n_frames: usize) -> Result<Vec<FixationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixations(&text, n_frames)
}

pub fn format_fixations(records: &[FixationRecord]) -> String {
    let mut s = String::from("frame,subject,x,y\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.frame, r.subject, r.x, r.y));
    }
    s
}

pub fn write_fixations(path: &Path, records: &[FixationRecord]) -> Result<()> {
    std::fs::write(path, format_fixations(records)).map_err(|e| Error::io(path, e))
}
