//! Regression models behind one train/predict interface, plus a name registry.

mod knn;
mod linear;
mod tree;

pub use knn::{Knn, KnnConfig, Weighting};
pub use linear::{LinearModel, RidgeConfig};
pub use tree::{RegressionTree, TreeConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressorError {
    #[error("training matrix is empty")]
    EmptyMatrix,
    #[error("k = {k} exceeds the {rows} training rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model has not been trained")]
    Untrained,
    #[error("singular design: {0}; try ridge with lambda > 0")]
    SingularDesign(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown regressor `{name}`; available: {}", available.join(", "))]
    UnknownRegressor { name: String, available: Vec<String> },
}

/// A model that learns distance from feature rows.
///
/// Training again replaces the previous fit. Prediction never mutates.
pub trait Regressor: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn train(&mut self, matrix: &FeatureMatrix) -> Result<(), RegressorError>;

    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError>;

    fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, RegressorError> {
        (0..matrix.n_rows())
            .into_par_iter()
            .map(|i| self.predict(matrix.row(i)))
            .collect()
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), RegressorError> {
    if x.len() != expected {
        return Err(RegressorError::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

/// Builds a fresh untrained model.
pub type Factory = Arc<dyn Fn() -> Box<dyn Regressor> + Send + Sync>;

/// Model choice plus hyperparameters, as written in config files:
/// `model = { name = "knn", k = 2, weighting = "inverse_distance" }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ModelConfig {
    Knn(#[serde(default)] KnnConfig),
    Ols,
    Ridge(#[serde(default)] RidgeConfig),
    Tree(#[serde(default)] TreeConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Knn(KnnConfig::default())
    }
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Knn(_) => "knn",
            ModelConfig::Ols => "ols",
            ModelConfig::Ridge(_) => "ridge",
            ModelConfig::Tree(_) => "tree",
        }
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        match self {
            ModelConfig::Knn(c) => c.validate(),
            ModelConfig::Ols => Ok(()),
            ModelConfig::Ridge(c) => c.validate(),
            ModelConfig::Tree(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Box<dyn Regressor> {
        match self {
            ModelConfig::Knn(c) => Box::new(Knn::new(c.clone())),
            ModelConfig::Ols => Box::new(LinearModel::new(RidgeConfig { lambda: 0.0 })),
            ModelConfig::Ridge(c) => Box::new(LinearModel::new(c.clone())),
            ModelConfig::Tree(c) => Box::new(RegressionTree::new(c.clone())),
        }
    }

    pub fn factory(&self) -> Result<Factory, RegressorError> {
        self.validate()?;
        let cfg = self.clone();
        Ok(Arc::new(move || cfg.build()))
    }
}

/// Name to factory map. Starts with the built-in models; callers may add
/// their own.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, Factory>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut reg = Registry {
            entries: BTreeMap::new(),
        };
        for cfg in [
            ModelConfig::Knn(KnnConfig::default()),
            ModelConfig::Ols,
            ModelConfig::Ridge(RidgeConfig::default()),
            ModelConfig::Tree(TreeConfig::default()),
        ] {
            let name = cfg.name();
            reg.register(name, cfg.factory().expect("defaults are valid"));
        }
        reg
    }

    pub fn register(&mut self, name: impl Into<String>, factory: Factory) {
        self.entries.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn lookup(&self, name: &str) -> Result<Factory, RegressorError> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| RegressorError::UnknownRegressor {
                name: name.to_string(),
                available: self.names(),
            })
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("names", &self.names()).finish()
    }
}

/// Built-in factory with default hyperparameters.
pub fn registry_lookup(name: &str) -> Result<Factory, RegressorError> {
    Registry::builtin().lookup(name)
}
