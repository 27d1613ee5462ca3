//! Dataset files: a JSON header next to a CSV payload of the same stem.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the samples bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Split};
use crate::error::{Error, Result};

const FORMAT: &str = "locsymp-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub split: Split,
    pub tau: f64,
    pub noise_delta: f64,
    pub dim: usize,
    pub len: usize,
    pub payload: String,
    pub provenance: Provenance,
}

fn payload_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

/// Writes `path` (JSON header) and `path` with a `.csv` extension (samples).
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let csv_path = payload_path(path);
    let header = DatasetHeader {
        format: FORMAT.to_string(),
        split: ds.split,
        tau: ds.tau,
        noise_delta: ds.noise_delta,
        dim: ds.dim(),
        len: ds.len(),
        payload: csv_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        provenance: ds.provenance.clone(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(&header)?)?;

    let mut w = csv::Writer::from_path(&csv_path)?;
    let n = ds.dim();
    let names: Vec<String> = (0..n)
        .map(|i| format!("x{i}"))
        .chain((0..n).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&names)?;
    let mut row = Vec::with_capacity(2 * n);
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        row.clear();
        row.extend(x.iter().chain(y).map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    if header.format != FORMAT {
        return Err(Error::Parse(format!("unsupported dataset format {:?}", header.format)));
    }
    let dim = header.provenance.system.dim();
    if header.dim != dim {
        return Err(Error::dim("dataset header", dim, header.dim));
    }
    let csv_path = path.with_file_name(&header.payload);
    let mut r = csv::Reader::from_path(&csv_path)?;
    let mut inputs = Vec::with_capacity(header.len);
    let mut targets = Vec::with_capacity(header.len);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 * dim {
            return Err(Error::dim("dataset row", 2 * dim, rec.len()));
        }
        let vals = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        inputs.push(vals[..dim].to_vec());
        targets.push(vals[dim..].to_vec());
    }
    if inputs.len() != header.len {
        return Err(Error::dim("dataset rows", header.len, inputs.len()));
    }
    let mut ds = Dataset::new(inputs, targets, header.tau, header.split, header.provenance)?;
    ds.noise_delta = header.noise_delta;
    Ok(ds)
}
