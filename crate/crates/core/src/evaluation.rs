//! Error metrics and the evaluation protocols: held-out split, cross-environment
//! transfer and leave-one-distance-out cross-validation.
//!
//! The headline metric is the *averaged* MAE: MAE per ground-truth distance,
//! then an unweighted mean over distances, so distances with more packets do
//! not dominate.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CirRecord, Dataset, DatasetError, DistanceKey, GainKey};
use crate::features::{
    apply_standardizer, build_matrix, feature_row, fit_standardizer, standardize_exclusions, FeatureError,
    FeatureMatrix, FeatureSpec, Standardizer,
};
use crate::metrics::exact_sum;
use crate::regressors::{Factory, Regressor, RegressorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("need at least 3 distinct distances, got {0}")]
    TooFewDistances(usize),
    #[error("need at least 2 environments, got {0}")]
    TooFewEnvironments(usize),
    #[error("train and test sets cover different environments")]
    EnvironmentMismatch,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Seeded train fraction used for same-environment evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Feature extraction, optional standardization and a trained model.
#[derive(Debug)]
pub struct TrainedPipeline {
    spec: FeatureSpec,
    standardizer: Option<Standardizer>,
    model: Box<dyn Regressor>,
}

impl TrainedPipeline {
    /// Fits the standardizer (when the spec asks for one) and the model on
    /// the delivered records of `train`.
    pub fn fit(train: &Dataset, spec: &FeatureSpec, factory: &Factory) -> Result<Self, EvalError> {
        let raw = build_matrix(train, spec)?;
        let (standardizer, matrix) = if spec.standardize {
            let s = fit_standardizer(&raw, &standardize_exclusions())?;
            let m = apply_standardizer(&s, &raw)?;
            (Some(s), m)
        } else {
            (None, raw)
        };
        let mut model = factory();
        model.train(&matrix)?;
        Ok(Self {
            spec: spec.clone(),
            standardizer,
            model,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn model(&self) -> &dyn Regressor {
        self.model.as_ref()
    }

    /// Model-ready matrix of the delivered records in `ds`.
    pub fn transform(&self, ds: &Dataset) -> Result<FeatureMatrix, EvalError> {
        let raw = build_matrix(ds, &self.spec)?;
        Ok(match &self.standardizer {
            Some(s) => apply_standardizer(s, &raw)?,
            None => raw,
        })
    }

    /// Distance estimate for one packet, `None` if it was lost.
    pub fn predict_record(&self, rec: &CirRecord) -> Result<Option<f64>, EvalError> {
        let Some(mut row) = feature_row(rec, &self.spec) else {
            return Ok(None);
        };
        if let Some(s) = &self.standardizer {
            s.transform_row(&mut row);
        }
        Ok(Some(self.model.predict(&row)?))
    }

    pub fn evaluate(&self, test: &Dataset) -> Result<EvalReport, EvalError> {
        let matrix = match self.transform(test) {
            Err(EvalError::Feature(FeatureError::NoDeliveredRecords)) => return Err(EvalError::EmptyTestSet),
            other => other?,
        };
        evaluate(self.model(), &matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_distance_mae: BTreeMap<DistanceKey, f64>,
    /// Unweighted mean of `per_distance_mae`.
    pub averaged_mae: f64,
    /// Sample-weighted MAE.
    pub overall_mae: f64,
    pub rmse: f64,
    pub per_gain_mae: BTreeMap<GainKey, f64>,
    pub n_test: usize,
}

fn mean(values: &[f64]) -> f64 {
    exact_sum(values) / values.len() as f64
}

impl EvalReport {
    /// Builds a report from matched targets, gains and predictions.
    ///
    /// Sums are correctly rounded, so each per-distance MAE depends only on
    /// the multiset of errors at that distance.
    pub fn from_predictions(targets: &[f64], gains: &[f64], predictions: &[f64]) -> Result<Self, EvalError> {
        if targets.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let errors: Vec<f64> = targets.iter().zip(predictions).map(|(t, p)| (p - t).abs()).collect();
        let mut by_distance: BTreeMap<DistanceKey, Vec<f64>> = BTreeMap::new();
        let mut by_gain: BTreeMap<GainKey, Vec<f64>> = BTreeMap::new();
        for ((t, g), e) in targets.iter().zip(gains).zip(&errors) {
            by_distance.entry(DistanceKey::from_meters(*t)).or_default().push(*e);
            let gain = GainKey::from_db(*g).expect("matrix gains are on the grid");
            by_gain.entry(gain).or_default().push(*e);
        }
        let per_distance_mae: BTreeMap<DistanceKey, f64> =
            by_distance.into_iter().map(|(d, e)| (d, mean(&e))).collect();
        let per_gain_mae = by_gain.into_iter().map(|(g, e)| (g, mean(&e))).collect();
        let averaged_mae = mean(&per_distance_mae.values().copied().collect::<Vec<_>>());
        let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
        Ok(Self {
            averaged_mae,
            overall_mae: mean(&errors),
            rmse: mean(&squares).sqrt(),
            per_distance_mae,
            per_gain_mae,
            n_test: targets.len(),
        })
    }
}

/// Predicts every row of an already transformed test matrix.
pub fn evaluate(model: &dyn Regressor, test: &FeatureMatrix) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let predictions = model.predict_matrix(test)?;
    EvalReport::from_predictions(test.targets(), test.gains(), &predictions)
}

/// Trains on a seeded split of `dataset` and evaluates on the held-out part.
pub fn split_evaluate(
    dataset: &Dataset,
    spec: &FeatureSpec,
    factory: &Factory,
    split: SplitConfig,
) -> Result<EvalReport, EvalError> {
    let (train, test) = dataset.split_train_test(split.train_fraction, split.seed)?;
    TrainedPipeline::fit(&train, spec, factory)?.evaluate(&test)
}

/// Reports keyed by (training environment, test environment).
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub cells: BTreeMap<(String, String), EvalReport>,
}

#[derive(Serialize, Deserialize)]
struct TransferCell {
    train_env: String,
    test_env: String,
    report: EvalReport,
}

impl Serialize for TransferMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let cells: Vec<TransferCell> = self
            .cells
            .iter()
            .map(|((a, b), r)| TransferCell {
                train_env: a.clone(),
                test_env: b.clone(),
                report: r.clone(),
            })
            .collect();
        #[derive(Serialize)]
        struct Doc {
            cells: Vec<TransferCell>,
        }
        Doc { cells }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransferMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            cells: Vec<TransferCell>,
        }
        let doc = Doc::deserialize(deserializer)?;
        Ok(TransferMatrix {
            cells: doc
                .cells
                .into_iter()
                .map(|c| ((c.train_env, c.test_env), c.report))
                .collect(),
        })
    }
}

impl TransferMatrix {
    pub fn environments(&self) -> Vec<String> {
        let mut envs: Vec<String> = self.cells.keys().map(|(a, _)| a.clone()).collect();
        envs.dedup();
        envs
    }

    pub fn get(&self, train_env: &str, test_env: &str) -> Option<&EvalReport> {
        self.cells.get(&(train_env.to_string(), test_env.to_string()))
    }

    /// One row per (train_env, test_env, distance).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train_env", "test_env", "distance_m", "mae_m"])?;
        for ((a, b), report) in &self.cells {
            for (d, mae) in &report.per_distance_mae {
                w.write_record([a.clone(), b.clone(), d.to_string(), mae.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Averaged-MAE table, training environments as rows.
    pub fn text_table(&self) -> String {
        let envs = self.environments();
        let width = envs.iter().map(String::len).max().unwrap_or(0).max(12);
        let mut out = format!("{:<width$}", "train \\ test");
        for e in &envs {
            out.push_str(&format!(" | {e:>width$}"));
        }
        out.push('\n');
        for a in &envs {
            out.push_str(&format!("{a:<width$}"));
            for b in &envs {
                match self.get(a, b) {
                    Some(r) => out.push_str(&format!(" | {:>width$.3}", r.averaged_mae)),
                    None => out.push_str(&format!(" | {:>width$}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains in every environment and tests in every environment.
///
/// Same-environment cells use a seeded split of the training set; cross
/// cells train on all of `train_sets[a]` and test on all of `test_sets[b]`.
pub fn transfer_study(
    train_sets: &BTreeMap<String, Dataset>,
    test_sets: &BTreeMap<String, Dataset>,
    spec: &FeatureSpec,
    factory: &Factory,
    split: SplitConfig,
) -> Result<TransferMatrix, EvalError> {
    if train_sets.len() < 2 {
        return Err(EvalError::TooFewEnvironments(train_sets.len()));
    }
    if !train_sets.keys().eq(test_sets.keys()) {
        return Err(EvalError::EnvironmentMismatch);
    }
    let pairs: Vec<(&String, &String)> = train_sets
        .keys()
        .flat_map(|a| test_sets.keys().map(move |b| (a, b)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(a, b)| {
            let report = if a == b {
                split_evaluate(&train_sets[a], spec, factory, split)?
            } else {
                TrainedPipeline::fit(&train_sets[a], spec, factory)?.evaluate(&test_sets[b])?
            };
            Ok(((a.clone(), b.clone()), report))
        })
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    Ok(TransferMatrix { cells })
}

/// Leave-one-distance-out cross-validation.
///
/// Each fold withholds every record at one distance, trains on the rest and
/// tests on the withheld distance only.
pub fn loo_distance_cv(dataset: &Dataset, spec: &FeatureSpec, factory: &Factory) -> Result<EvalReport, EvalError> {
    let distances: Vec<DistanceKey> = dataset.distances().into_iter().collect();
    if distances.len() < 3 {
        return Err(EvalError::TooFewDistances(distances.len()));
    }
    let folds = distances
        .par_iter()
        .map(|&held_out| {
            let train = dataset.filter(|r| r.distance_key() != held_out);
            let test = dataset.filter(|r| r.distance_key() == held_out);
            debug_assert!(train.records().iter().all(|r| r.distance_key() != held_out));
            let pipeline = TrainedPipeline::fit(&train, spec, factory)?;
            let matrix = pipeline.transform(&test)?;
            let predictions = pipeline.model().predict_matrix(&matrix)?;
            Ok((matrix, predictions))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut targets = Vec::new();
    let mut gains = Vec::new();
    let mut predictions = Vec::new();
    for (m, p) in folds {
        targets.extend_from_slice(m.targets());
        gains.extend_from_slice(m.gains());
        predictions.extend(p);
    }
    EvalReport::from_predictions(&targets, &gains, &predictions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let t = [0.5, 1.0, 1.0, 2.0];
        let r = EvalReport::from_predictions(&t, &[0.0; 4], &t).unwrap();
        assert_eq!((r.averaged_mae, r.overall_mae, r.rmse), (0.0, 0.0, 0.0));
        assert!(r.per_distance_mae.values().all(|v| *v == 0.0));
    }

    #[test]
    fn three_error_example() {
        let targets = [1.0, 1.0, 2.0];
        let preds = [1.1, 0.7, 2.2];
        let r = EvalReport::from_predictions(&targets, &[10.0; 3], &preds).unwrap();
        let d1 = r.per_distance_mae[&DistanceKey::from_meters(1.0)];
        let d2 = r.per_distance_mae[&DistanceKey::from_meters(2.0)];
        assert!((d1 - 0.2).abs() < 1e-12 && (d2 - 0.2).abs() < 1e-12);
        assert!((r.averaged_mae - 0.2).abs() < 1e-12);
        assert!((r.overall_mae - 0.2).abs() < 1e-12);
        assert_eq!(r.n_test, 3);
        assert!(r.rmse >= r.overall_mae);
    }

    #[test]
    fn duplicating_a_distance_keeps_averaged_mae() {
        // errors {0.1, 0.3} at 1 m and {0.6} at 2 m
        let targets = [1.0, 1.0, 2.0];
        let preds = [1.1, 0.7, 2.6];
        let base = EvalReport::from_predictions(&targets, &[10.0; 3], &preds).unwrap();
        let dup_t = [1.0, 1.0, 2.0, 1.0, 1.0];
        let dup_p = [1.1, 0.7, 2.6, 1.1, 0.7];
        let dup = EvalReport::from_predictions(&dup_t, &[10.0; 5], &dup_p).unwrap();
        assert_eq!(base.averaged_mae.to_bits(), dup.averaged_mae.to_bits());
        assert!((base.overall_mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((dup.overall_mae - 1.4 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_test_set() {
        assert!(matches!(
            EvalReport::from_predictions(&[], &[], &[]),
            Err(EvalError::EmptyTestSet)
        ));
    }

    #[test]
    fn report_json_keys_are_readable() {
        let r = EvalReport::from_predictions(&[0.5, 6.5], &[33.5, 12.0], &[0.5, 6.0]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_distance_mae"]["6.5"], 0.5);
        assert_eq!(json["per_gain_mae"]["33.5"], 0.0);
        let back: EvalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
