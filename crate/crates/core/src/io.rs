//! File formats: CSV datasets (columns d0..d{D-1}, optional trailing
//! integer label column, optional '#'-prefixed descriptor line), trace
//! CSVs, JSON documents, and output digests.
//!
//! Floats are written in Rust's shortest round-trip representation with a
//! '.' decimal separator and LF line endings, so save/load is bit-exact.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// Render a dataset to CSV text.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    if !ds.descriptor.is_empty() {
        let _ = writeln!(out, "# {}", ds.descriptor);
    }
    let d = ds.data.ncols();
    let mut header: Vec<String> = (0..d).map(|j| format!("d{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    let _ = writeln!(out, "{}", header.join(","));
    for i in 0..ds.data.nrows() {
        let mut row: Vec<String> = (0..d).map(|j| format!("{}", ds.data[(i, j)])).collect();
        if let Some(labels) = &ds.labels {
            row.push(format!("{}", labels[i]));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

/// Parse a dataset CSV; malformed input reports the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().peekable();
    let mut descriptor = String::new();
    while let Some((_, line)) = lines.peek() {
        if let Some(rest) = line.strip_prefix('#') {
            if !descriptor.is_empty() {
                descriptor.push('\n');
            }
            descriptor.push_str(rest.trim());
            lines.next();
        } else {
            break;
        }
    }
    let (header_no, header) = lines
        .next()
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing header line".into(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    let has_label = cols.last() == Some(&"label");
    let d = if has_label { cols.len() - 1 } else { cols.len() };
    if d == 0 {
        return Err(Error::Parse {
            line: header_no + 1,
            msg: "no data columns in header".into(),
        });
    }
    for (j, c) in cols.iter().take(d).enumerate() {
        if *c != format!("d{j}") {
            return Err(Error::Parse {
                line: header_no + 1,
                msg: format!("expected column 'd{j}', found '{c}'"),
            });
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: no + 1,
                msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for f in fields.iter().take(d) {
            row.push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: no + 1,
                msg: format!("bad float '{f}': {e}"),
            })?);
        }
        if has_label {
            labels.push(fields[d].parse::<usize>().map_err(|e| Error::Parse {
                line: no + 1,
                msg: format!("bad label '{}': {e}", fields[d]),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: header_no + 2,
            msg: "no data rows".into(),
        });
    }
    let n = rows.len();
    let data = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    Ok(Dataset {
        data,
        labels: if has_label { Some(labels) } else { None },
        descriptor,
        seed: 0,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// Two-column trace CSV (header then one row per entry).
pub fn trace_to_csv(header: &str, values: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

/// Rate-curve CSV: snr_db plus rate/stderr column pairs for each method
/// present in the sweep. Failed cells leave their fields empty.
pub fn curve_to_csv(curve: &crate::capacity::CapacityCurve) -> String {
    let mut out = String::new();
    let mut header = vec!["snr_db".to_string()];
    for m in &curve.methods {
        header.push(format!("rate_{}", m.tag()));
        header.push(format!("stderr_{}", m.tag()));
    }
    let _ = writeln!(out, "{}", header.join(","));
    for (k, snr) in curve.snr_db.iter().enumerate() {
        let mut row = vec![format!("{snr}")];
        for cells in &curve.cells {
            let cell = &cells[k];
            row.push(cell.rate_bits.map(|v| format!("{v}")).unwrap_or_default());
            row.push(cell.stderr.map(|v| format!("{v}")).unwrap_or_default());
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
