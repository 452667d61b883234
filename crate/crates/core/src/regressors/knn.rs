use serde::{Deserialize, Serialize};

use super::{check_dim, Regressor, RegressorError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    InverseDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    pub weighting: Weighting,
}

impl Default for KnnConfig {
    /// Two neighbours, inverse-distance weighted.
    fn default() -> Self {
        Self {
            k: 2,
            weighting: Weighting::InverseDistance,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if self.k == 0 {
            return Err(RegressorError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct KnnFit {
    n_cols: usize,
    data: Vec<f64>,
    targets: Vec<f64>,
}

/// Brute-force k-nearest-neighbour regressor over Euclidean distance.
///
/// Neighbours are ordered by (distance, training row); a query that lands
/// exactly on training rows returns the mean target of those rows.
#[derive(Debug, Clone)]
pub struct Knn {
    config: KnnConfig,
    fit: Option<KnnFit>,
}

impl Knn {
    pub fn new(config: KnnConfig) -> Self {
        Self { config, fit: None }
    }

    pub fn config(&self) -> &KnnConfig {
        &self.config
    }

    /// The k nearest rows as `(squared distance, row)`, nearest first.
    fn neighbours(&self, fit: &KnnFit, x: &[f64]) -> Vec<(f64, usize)> {
        let k = self.config.k;
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in fit.data.chunks_exact(fit.n_cols).enumerate() {
            let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == k && d2 >= best[k - 1].0 {
                continue;
            }
            // later rows go after equal distances, so earlier rows win ties
            let pos = best.partition_point(|&(bd, _)| bd <= d2);
            best.insert(pos, (d2, i));
            best.truncate(k);
        }
        best
    }
}

impl Regressor for Knn {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn train(&mut self, matrix: &FeatureMatrix) -> Result<(), RegressorError> {
        self.config.validate()?;
        if matrix.is_empty() {
            return Err(RegressorError::EmptyMatrix);
        }
        if self.config.k > matrix.n_rows() {
            return Err(RegressorError::KTooLarge {
                k: self.config.k,
                rows: matrix.n_rows(),
            });
        }
        self.fit = Some(KnnFit {
            n_cols: matrix.n_cols(),
            data: matrix.rows().flatten().copied().collect(),
            targets: matrix.targets().to_vec(),
        });
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        let fit = self.fit.as_ref().ok_or(RegressorError::Untrained)?;
        check_dim(fit.n_cols, x)?;
        let nn = self.neighbours(fit, x);

        let exact: Vec<f64> = nn
            .iter()
            .filter(|(d2, _)| *d2 == 0.0)
            .map(|&(_, i)| fit.targets[i])
            .collect();
        if !exact.is_empty() {
            return Ok(exact.iter().sum::<f64>() / exact.len() as f64);
        }
        match self.config.weighting {
            Weighting::Uniform => Ok(nn.iter().map(|&(_, i)| fit.targets[i]).sum::<f64>() / nn.len() as f64),
            Weighting::InverseDistance => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &(d2, i) in &nn {
                    let w = 1.0 / d2.sqrt();
                    num += w * fit.targets[i];
                    den += w;
                }
                Ok(num / den)
            }
        }
    }
}
