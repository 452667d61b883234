use serde::{Deserialize, Serialize};

use super::{check_dim, Regressor, RegressorError};
use crate::features::FeatureMatrix;

/// Relative pivot size below which the Gram matrix counts as singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    /// Penalty on the coefficients; 0 gives ordinary least squares.
    pub lambda: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(RegressorError::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LinearFit {
    coef: Vec<f64>,
    intercept: f64,
}

/// Least squares with an optional ridge penalty and an unpenalized intercept,
/// solved through the centred normal equations.
#[derive(Debug, Clone)]
pub struct LinearModel {
    config: RidgeConfig,
    fit: Option<LinearFit>,
}

impl LinearModel {
    pub fn new(config: RidgeConfig) -> Self {
        Self { config, fit: None }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        self.fit.as_ref().map(|f| f.coef.as_slice())
    }

    pub fn intercept(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.intercept)
    }
}

/// In-place Cholesky factorization of a row-major SPD matrix (lower triangle).
fn cholesky(a: &mut [f64], n: usize) -> Result<(), RegressorError> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > PIVOT_TOLERANCE * max_diag.max(f64::MIN_POSITIVE)) {
            return Err(RegressorError::SingularDesign(format!("rank deficient at column {j}")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

impl Regressor for LinearModel {
    fn name(&self) -> &'static str {
        if self.config.lambda == 0.0 {
            "ols"
        } else {
            "ridge"
        }
    }

    fn train(&mut self, matrix: &FeatureMatrix) -> Result<(), RegressorError> {
        self.config.validate()?;
        let (n, p) = (matrix.n_rows(), matrix.n_cols());
        if n == 0 {
            return Err(RegressorError::EmptyMatrix);
        }
        let lambda = self.config.lambda;
        if lambda == 0.0 && n < p + 1 {
            return Err(RegressorError::SingularDesign(format!(
                "{n} rows cannot determine {p} coefficients plus an intercept"
            )));
        }
        let y = matrix.targets();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut x_mean = vec![0.0; p];
        for row in matrix.rows() {
            for (m, v) in x_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        let mut centred = vec![0.0; p];
        for (row, &t) in matrix.rows().zip(y) {
            for ((c, v), m) in centred.iter_mut().zip(row).zip(&x_mean) {
                *c = v - m;
            }
            let yc = t - y_mean;
            for i in 0..p {
                rhs[i] += centred[i] * yc;
                for j in 0..=i {
                    gram[i * p + j] += centred[i] * centred[j];
                }
            }
        }
        for i in 0..p {
            gram[i * p + i] += lambda;
            for j in 0..i {
                gram[j * p + i] = gram[i * p + j];
            }
        }
        cholesky(&mut gram, p)?;
        cholesky_solve(&gram, p, &mut rhs);
        let intercept = y_mean - rhs.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
        self.fit = Some(LinearFit { coef: rhs, intercept });
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        let fit = self.fit.as_ref().ok_or(RegressorError::Untrained)?;
        check_dim(fit.coef.len(), x)?;
        Ok(fit.intercept + fit.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(xs: &[f64], ys: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_rows(
            vec!["x".into()],
            xs.iter().map(|x| vec![*x]).collect(),
            ys.to_vec(),
            vec![0.0; xs.len()],
        )
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.5, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let mut m = LinearModel::new(RidgeConfig { lambda: 0.0 });
        m.train(&one_feature(&xs, &ys)).unwrap();
        assert!((m.coefficients().unwrap()[0] - 2.0).abs() < 1e-8);
        assert!((m.intercept().unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(m.name(), "ols");
    }

    #[test]
    fn heavy_ridge_predicts_mean() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 2.0, 6.0];
        let mut m = LinearModel::new(RidgeConfig { lambda: 1e12 });
        m.train(&one_feature(&xs, &ys)).unwrap();
        assert!(m.coefficients().unwrap()[0].abs() < 1e-9);
        assert!((m.predict(&[10.0]).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn ols_needs_enough_rows() {
        let mut m = LinearModel::new(RidgeConfig { lambda: 0.0 });
        assert!(matches!(
            m.train(&one_feature(&[1.0], &[1.0])),
            Err(RegressorError::SingularDesign(_))
        ));
        let mut r = LinearModel::new(RidgeConfig { lambda: 0.5 });
        r.train(&one_feature(&[1.0], &[1.0])).unwrap();
    }

    #[test]
    fn collinear_columns_are_singular() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = FeatureMatrix::from_rows(
            vec!["a".into(), "b".into()],
            rows,
            (0..6).map(|i| i as f64).collect(),
            vec![0.0; 6],
        );
        let mut ols = LinearModel::new(RidgeConfig { lambda: 0.0 });
        assert!(matches!(ols.train(&m), Err(RegressorError::SingularDesign(_))));
        let mut ridge = LinearModel::new(RidgeConfig { lambda: 1e-3 });
        ridge.train(&m).unwrap();
    }

    #[test]
    fn empty_matrix() {
        let m = FeatureMatrix::from_rows(vec!["x".into()], vec![], vec![], vec![]);
        assert_eq!(
            LinearModel::new(RidgeConfig::default()).train(&m),
            Err(RegressorError::EmptyMatrix)
        );
    }
}
