//! Core data containers, CSV ingestion, standardization, and data splitting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A response vector and predictor matrix with named columns.
///
/// Immutable after construction; all pipeline stages borrow it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub standardized: bool,
}

/// Centering/scaling parameters recorded by [`standardize`], sufficient to
/// map coefficients fitted on the standardized scale back to the raw scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub y_mean: f64,
    pub x_means: Vec<f64>,
    pub x_sds: Vec<f64>,
}

impl Standardizer {
    /// Map coefficients fitted on the standardized scale back to raw scale,
    /// returning (intercept, slopes).
    pub fn unstandardize_coefficients(&self, beta_std: &[f64]) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = beta_std
            .iter()
            .zip(&self.x_sds)
            .map(|(b, s)| b / s)
            .collect();
        let intercept = self.y_mean
            - slopes
                .iter()
                .zip(&self.x_means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        (intercept, slopes)
    }
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, X has {}",
                n,
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::TooFewRows(format!("n = {n}, need at least 2")));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidConfig("need at least one predictor".into()));
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: i + 1,
                    column: "<response>".into(),
                });
            }
        }
        for j in 0..x.ncols() {
            for i in 0..n {
                if !x[(i, j)].is_finite() {
                    return Err(Error::NonFinite {
                        row: i + 1,
                        column: names[j].clone(),
                    });
                }
            }
        }
        Ok(Self {
            y,
            x,
            names,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Row-restricted copy of the response and the given predictor columns.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        let x = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.x[(rows[i], cols[j])]);
        (y, x)
    }
}

/// Load a dataset from a CSV file with a header row. The response is selected
/// by column name; all remaining columns become predictors in header order.
pub fn load_csv<P: AsRef<Path>>(path: P, response_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())?;

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    for (i, name) in header.iter().enumerate() {
        if header[..i].contains(name) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let response_idx = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::MissingResponse(response_column.to_string()))?;

    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = row_idx + 1;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row: row_no,
                found: record.len(),
                expected: header.len(),
            });
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                row: row_no,
                column: header[col_idx].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumericCell {
                    row: row_no,
                    column: header[col_idx].clone(),
                    value: cell.to_string(),
                });
            }
            if col_idx == response_idx {
                y.push(value);
            } else {
                row.push(value);
            }
        }
        rows.push(row);
    }

    let n = rows.len();
    let p = header.len() - 1;
    if n < 2 {
        return Err(Error::TooFewRows(format!("csv has {n} data rows")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(DVector::from_vec(y), x, names)
}

/// Center the response and center/scale every predictor column to unit sample
/// standard deviation. Returns the transformed dataset and the parameters
/// needed to back-map coefficients.
pub fn standardize(d: &Dataset) -> Result<(Dataset, Standardizer)> {
    let n = d.n();
    let nf = n as f64;
    let y_mean = d.y.iter().sum::<f64>() / nf;
    let y = DVector::from_iterator(n, d.y.iter().map(|v| v - y_mean));

    let mut x = d.x.clone();
    let mut x_means = Vec::with_capacity(d.p());
    let mut x_sds = Vec::with_capacity(d.p());
    for j in 0..d.p() {
        let col_mean = x.column(j).iter().sum::<f64>() / nf;
        let var = x
            .column(j)
            .iter()
            .map(|v| (v - col_mean) * (v - col_mean))
            .sum::<f64>()
            / (nf - 1.0);
        let sd = var.sqrt();
        if sd <= 1e-12 {
            return Err(Error::ConstantColumn(d.names[j].clone()));
        }
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - col_mean) / sd;
        }
        x_means.push(col_mean);
        x_sds.push(sd);
    }

    let mut out = Dataset::new(y, x, d.names.clone())?;
    out.standardized = true;
    Ok((
        out,
        Standardizer {
            y_mean,
            x_means,
            x_sds,
        },
    ))
}

/// A random half/half partition of row indices `0..n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPair {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
    pub seed: u64,
}

/// Draw a uniformly random partition of `0..n` into two halves of sizes
/// `floor(n/2)` and `ceil(n/2)`. Deterministic given the stream.
pub fn split_half(n: usize, stream: RngStream) -> Result<SplitPair> {
    if n < 4 {
        return Err(Error::TooFewRows(format!("n = {n}, splitting needs n >= 4")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream.rng();
    perm.shuffle(&mut rng);
    let cut = n / 2;
    let mut d1 = perm[..cut].to_vec();
    let mut d2 = perm[cut..].to_vec();
    d1.sort_unstable();
    d2.sort_unstable();
    Ok(SplitPair {
        d1,
        d2,
        seed: stream.seed,
    })
}
