//! Reference implementations the library is checked against.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwb_dess::dataset::gain_grid;
use uwb_dess::features::FeatureMatrix;
use uwb_dess::regressors::Weighting;

/// Exhaustive KNN: sorts every training row by (squared distance, row index)
/// and takes the first `k`.
pub fn brute_force_knn(rows: &[Vec<f64>], targets: &[f64], query: &[f64], k: usize, weighting: Weighting) -> f64 {
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &all[..k];

    let zero: Vec<usize> = nearest.iter().filter(|(d2, _)| *d2 == 0.0).map(|&(_, i)| i).collect();
    if !zero.is_empty() {
        return zero.iter().map(|&i| targets[i]).sum::<f64>() / zero.len() as f64;
    }
    match weighting {
        Weighting::Uniform => nearest.iter().map(|&(_, i)| targets[i]).sum::<f64>() / k as f64,
        Weighting::InverseDistance => {
            let (mut num, mut den) = (0.0, 0.0);
            for &(d2, i) in nearest {
                let w = 1.0 / d2.sqrt();
                num += w * targets[i];
                den += w;
            }
            num / den
        }
    }
}

/// Random KNN problem. Coordinates come from a coarse lattice so exact
/// duplicates and distance ties occur regularly.
pub struct KnnCase {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub queries: Vec<Vec<f64>>,
}

pub fn knn_case(rng: &mut ChaCha8Rng) -> KnnCase {
    let n = rng.random_range(5..60);
    let p = rng.random_range(1..6);
    let lattice = rng.random_bool(0.5);
    let coord = |rng: &mut ChaCha8Rng| {
        if lattice {
            rng.random_range(-3..=3) as f64 * 0.5
        } else {
            rng.random_range(-10.0..10.0)
        }
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| coord(rng)).collect()).collect();
    let targets = (0..n).map(|_| rng.random_range(0.5..6.5)).collect();
    let mut queries: Vec<Vec<f64>> = (0..8).map(|_| (0..p).map(|_| coord(rng)).collect()).collect();
    queries.push(rows[rng.random_range(0..n)].clone());
    KnnCase { rows, targets, queries }
}

pub fn matrix(rows: &[Vec<f64>], targets: &[f64]) -> FeatureMatrix {
    let p = rows.first().map_or(0, Vec::len);
    let cols = (0..p).map(|j| format!("x{j}")).collect();
    let gain = gain_grid().next().unwrap();
    FeatureMatrix::from_rows(cols, rows.to_vec(), targets.to_vec(), vec![gain; rows.len()])
}

/// Least squares with intercept through nalgebra's SVD of the full design
/// matrix. Returns `(intercept, coefficients)`.
pub fn svd_least_squares(rows: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
    let n = rows.len();
    let p = rows[0].len();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let beta = design
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-14)
        .expect("svd solve");
    (beta[0], beta.iter().skip(1).copied().collect())
}

/// Random well-conditioned regression problem.
pub fn ols_case(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..8);
    let n = rng.random_range(p + 5..80);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b0 = rng.random_range(-5.0..5.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| b0 + r.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + rng.random_range(-0.5..0.5))
        .collect();
    (rows, y)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
