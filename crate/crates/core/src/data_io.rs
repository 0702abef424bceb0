//! Tabular dataset ingestion and seeded train/test splitting.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop any row with an empty or unparseable cell.
    #[default]
    DropRow,
    /// Fail on the first such cell.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub delimiter: char,
    pub missing_policy: MissingPolicy,
    /// Columns skipped entirely (identifiers, free text).
    pub ignore_columns: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: ',', missing_policy: MissingPolicy::DropRow, ignore_columns: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub rows_dropped: usize,
    /// SHA-256 of the raw file bytes, hex encoded.
    pub source_digest: String,
}

impl TabularDataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(idx.len(), self.x.ncols(), |r, c| self.x[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.y[idx[r]]);
        (x, y)
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s == "?" || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a CSV with a header row from memory.
pub fn parse_csv(bytes: &[u8], name: &str, target_column: &str, opts: &CsvOptions) -> Result<TabularDataset> {
    if !opts.delimiter.is_ascii() {
        return Err(Error::Data(format!("delimiter {:?} is not ASCII", opts.delimiter)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter as u8)
        .has_headers(true)
        .from_reader(bytes);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Data(format!("target column '{target_column}' not found")))?;
    let features: Vec<usize> = (0..headers.len())
        .filter(|&k| k != target && !opts.ignore_columns.iter().any(|c| c == &headers[k]))
        .collect();
    if features.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let y = record.get(target).and_then(parse_cell);
        let x: Vec<Option<f64>> = features.iter().map(|&k| record.get(k).and_then(parse_cell)).collect();
        match (y, x.iter().all(Option::is_some)) {
            (Some(y), true) => {
                rows.push(x.into_iter().flatten().collect());
                ys.push(y);
            }
            _ => {
                if opts.missing_policy == MissingPolicy::Error {
                    return Err(Error::Data(format!("missing or non-numeric cell on data row {}", line + 1)));
                }
                dropped += 1;
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!("only {} complete rows after cleaning", rows.len())));
    }
    let d = features.len();
    let x = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
    Ok(TabularDataset {
        name: name.to_string(),
        x,
        y: DVector::from_vec(ys),
        feature_names: features.iter().map(|&k| headers[k].clone()).collect(),
        rows_dropped: dropped,
        source_digest: hex::encode(Sha256::digest(bytes)),
    })
}

/// Loads a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, opts: &CsvOptions) -> Result<TabularDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(&bytes, &name, target_column, opts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training size ⌊n·fraction⌋.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    (n as f64 * train_fraction + 1e-9).floor() as usize
}

/// Seeded uniform permutation of 0..n; the first ⌊n·fraction⌋ indices train.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = train_size(n, train_fraction);
    if n_train < 2 || n - n_train < 1 {
        return Err(Error::InsufficientData(format!(
            "split of {n} rows at {train_fraction} leaves {n_train} train / {} test",
            n - n_train
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok(Split { train: idx, test })
}

pub fn split(dataset: &TabularDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    split_indices(dataset.n_rows(), train_fraction, seed)
}
