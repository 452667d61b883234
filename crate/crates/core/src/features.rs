//! Feature matrices built from delivered records, and column standardization.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CirRecord, Dataset, GainKey, Measurement, Register, CIR_LEN};

pub const GAIN_COLUMN: &str = "tx_gain_db";

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("dataset has no delivered records")]
    NoDeliveredRecords,
    #[error("feature spec selects no features")]
    EmptySpec,
    #[error("need at least 2 rows to fit a standardizer, got {0}")]
    TooFewRows(usize),
    #[error("column mismatch: expected {expected:?}, got {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown feature preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },
}

/// Which inputs a model sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// The 32 |CIR| values.
    pub use_cir_magnitudes: bool,
    #[serde(default)]
    pub use_registers: Vec<Register>,
    pub include_tx_gain: bool,
    /// Standardize every column except the gain.
    pub standardize: bool,
}

pub const FEATURE_PRESETS: [&str; 4] = ["fppl_only", "fppl_gain", "cir32_gain", "cir32_nogain"];

impl FeatureSpec {
    /// FPPL alone, unscaled.
    pub fn fppl_only() -> Self {
        Self {
            use_cir_magnitudes: false,
            use_registers: vec![Register::Fppl],
            include_tx_gain: false,
            standardize: false,
        }
    }

    /// FPPL plus the raw transmit gain, FPPL standardized.
    pub fn fppl_gain() -> Self {
        Self {
            use_cir_magnitudes: false,
            use_registers: vec![Register::Fppl],
            include_tx_gain: true,
            standardize: true,
        }
    }

    /// 32 standardized |CIR| values plus the raw transmit gain.
    pub fn cir32_gain() -> Self {
        Self {
            use_cir_magnitudes: true,
            use_registers: vec![],
            include_tx_gain: true,
            standardize: true,
        }
    }

    pub fn cir32_nogain() -> Self {
        Self {
            include_tx_gain: false,
            ..Self::cir32_gain()
        }
    }

    pub fn preset(name: &str) -> Result<Self, FeatureError> {
        match name {
            "fppl_only" => Ok(Self::fppl_only()),
            "fppl_gain" => Ok(Self::fppl_gain()),
            "cir32_gain" => Ok(Self::cir32_gain()),
            "cir32_nogain" => Ok(Self::cir32_nogain()),
            _ => Err(FeatureError::UnknownPreset {
                name: name.to_string(),
                available: FEATURE_PRESETS.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    /// Column names in matrix order: CIR, then registers, then gain.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        if self.use_cir_magnitudes {
            cols.extend((0..CIR_LEN).map(|k| ScalarFeature::CirAbs(k).to_string()));
        }
        cols.extend(self.use_registers.iter().map(|r| r.column().to_string()));
        if self.include_tx_gain {
            cols.push(GAIN_COLUMN.to_string());
        }
        cols
    }
}

/// A single named per-packet quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarFeature {
    Register(Register),
    /// Magnitude of CIR sample `k`.
    CirAbs(usize),
}

impl ScalarFeature {
    pub fn value(self, m: &Measurement) -> f64 {
        match self {
            ScalarFeature::Register(r) => r.value(&m.registers),
            ScalarFeature::CirAbs(k) => m.cir[k].norm(),
        }
    }
}

impl fmt::Display for ScalarFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFeature::Register(r) => f.write_str(r.column()),
            ScalarFeature::CirAbs(k) => write!(f, "cir_abs_{k}"),
        }
    }
}

impl FromStr for ScalarFeature {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(r) = Register::from_column(s) {
            return Ok(ScalarFeature::Register(r));
        }
        s.strip_prefix("cir_abs_")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k < CIR_LEN)
            .map(ScalarFeature::CirAbs)
            .ok_or_else(|| FeatureError::UnknownFeature(s.to_string()))
    }
}

/// Row-major numeric matrix with one row per delivered record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    data: Vec<f64>,
    /// Ground-truth distance per row.
    targets: Vec<f64>,
    /// Transmit gain per row, kept even when the gain is not a feature.
    gains: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from raw parts. Panics if the shapes disagree or a
    /// gain is off the 0.5 dB grid.
    pub fn from_rows(columns: Vec<String>, rows: Vec<Vec<f64>>, targets: Vec<f64>, gains: Vec<f64>) -> Self {
        assert_eq!(rows.len(), targets.len(), "one target per row");
        assert_eq!(rows.len(), gains.len(), "one gain per row");
        assert!(
            gains.iter().all(|g| GainKey::from_db(*g).is_some()),
            "gains must be on the grid"
        );
        let n_cols = columns.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "row width must match columns");
            data.extend(row);
        }
        Self {
            columns,
            data,
            targets,
            gains,
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

fn extend_row(out: &mut Vec<f64>, rec: &CirRecord, spec: &FeatureSpec) -> bool {
    let Some(m) = &rec.measurement else { return false };
    if spec.use_cir_magnitudes {
        out.extend(m.cir.iter().map(|c| c.norm()));
    }
    out.extend(spec.use_registers.iter().map(|r| r.value(&m.registers)));
    if spec.include_tx_gain {
        out.push(rec.tx_gain_db);
    }
    true
}

/// Unscaled feature row of a single record; `None` if it was not delivered.
pub fn feature_row(rec: &CirRecord, spec: &FeatureSpec) -> Option<Vec<f64>> {
    let mut row = Vec::with_capacity(spec.columns().len());
    extend_row(&mut row, rec, spec).then_some(row)
}

pub fn build_matrix(dataset: &Dataset, spec: &FeatureSpec) -> Result<FeatureMatrix, FeatureError> {
    let columns = spec.columns();
    if columns.is_empty() {
        return Err(FeatureError::EmptySpec);
    }
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut gains = Vec::new();
    for rec in dataset.records() {
        if extend_row(&mut data, rec, spec) {
            targets.push(rec.true_distance_m);
            gains.push(rec.tx_gain_db);
        }
    }
    if targets.is_empty() {
        return Err(FeatureError::NoDeliveredRecords);
    }
    let lost = dataset.len() - targets.len();
    if lost > 0 {
        log::debug!("build_matrix: skipped {lost} undelivered records");
    }
    Ok(FeatureMatrix {
        columns,
        data,
        targets,
        gains,
    })
}

/// Per-column affine map `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    columns: Vec<String>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(columns: Vec<String>) -> Self {
        let n = columns.len();
        Self {
            columns,
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Transforms one row in place; the caller guarantees the width.
    pub fn transform_row(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

/// Mean and population standard deviation of each non-excluded column.
/// Constant columns get scale 1.
pub fn fit_standardizer(matrix: &FeatureMatrix, exclude: &BTreeSet<String>) -> Result<Standardizer, FeatureError> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    let mut out = Standardizer::identity(matrix.columns.clone());
    for (j, name) in matrix.columns.iter().enumerate() {
        if exclude.contains(name) {
            continue;
        }
        let mean = matrix.column(j).sum::<f64>() / n as f64;
        let var = matrix.column(j).map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        out.mean[j] = mean;
        out.scale[j] = if std > 0.0 { std } else { 1.0 };
    }
    Ok(out)
}

pub fn apply_standardizer(std: &Standardizer, matrix: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    if std.columns != matrix.columns {
        return Err(FeatureError::ColumnMismatch {
            expected: std.columns.clone(),
            found: matrix.columns.clone(),
        });
    }
    let mut out = matrix.clone();
    for row in out.data.chunks_mut(matrix.n_cols()) {
        std.transform_row(row);
    }
    Ok(out)
}

/// Columns left unscaled when a spec asks for standardization.
pub fn standardize_exclusions() -> BTreeSet<String> {
    BTreeSet::from([GAIN_COLUMN.to_string()])
}
