use serde::{Deserialize, Serialize};

use super::{check_dim, Regressor, RegressorError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        if self.min_samples_leaf == 0 || self.max_depth == Some(0) {
            return Err(RegressorError::InvalidConfig(
                "max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    /// Summed squared error of both children.
    score: f64,
    /// Rows going left, in sorted order of `feature`.
    n_left: usize,
}

/// CART regression tree: binary splits minimizing children's squared error,
/// leaves predicting the mean target.
#[derive(Debug, Clone)]
pub struct RegressionTree {
    config: TreeConfig,
    n_cols: usize,
    root: Option<Node>,
}

impl RegressionTree {
    pub fn new(config: TreeConfig) -> Self {
        Self {
            config,
            n_cols: 0,
            root: None,
        }
    }

    pub fn depth(&self) -> usize {
        fn depth(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        self.root.as_ref().map_or(0, depth)
    }

    fn grow(&self, m: &FeatureMatrix, rows: &mut [usize], depth: usize) -> Node {
        let y = m.targets();
        let n = rows.len();
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
        let sse: f64 = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
        let min_leaf = self.config.min_samples_leaf;
        if sse == 0.0 || n < 2 * min_leaf || self.config.max_depth.is_some_and(|d| depth >= d) {
            return Node::Leaf(mean);
        }

        let mut best: Option<Candidate> = None;
        let mut order = rows.to_vec();
        for feature in 0..m.n_cols() {
            let x = |i: usize| m.row(i)[feature];
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
            // centred targets keep the running sums well conditioned
            let total: f64 = order.iter().map(|&i| y[i] - mean).sum();
            let (mut sum_l, mut sq_l) = (0.0, 0.0);
            let sq_total: f64 = order.iter().map(|&i| (y[i] - mean).powi(2)).sum();
            for pos in 0..n - 1 {
                let yc = y[order[pos]] - mean;
                sum_l += yc;
                sq_l += yc * yc;
                let n_l = pos + 1;
                let n_r = n - n_l;
                let (lo, hi) = (x(order[pos]), x(order[pos + 1]));
                if lo == hi || n_l < min_leaf || n_r < min_leaf {
                    continue;
                }
                let sum_r = total - sum_l;
                let sq_r = sq_total - sq_l;
                let score = (sq_l - sum_l * sum_l / n_l as f64) + (sq_r - sum_r * sum_r / n_r as f64);
                let threshold = lo + (hi - lo) / 2.0;
                if best.is_none_or(|b| score < b.score) {
                    best = Some(Candidate {
                        feature,
                        threshold,
                        score,
                        n_left: n_l,
                    });
                }
            }
        }

        match best {
            Some(c) if c.score < sse => {
                rows.sort_by(|&a, &b| m.row(a)[c.feature].total_cmp(&m.row(b)[c.feature]).then(a.cmp(&b)));
                let (left, right) = rows.split_at_mut(c.n_left);
                Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: Box::new(self.grow(m, left, depth + 1)),
                    right: Box::new(self.grow(m, right, depth + 1)),
                }
            }
            _ => Node::Leaf(mean),
        }
    }
}

impl Regressor for RegressionTree {
    fn name(&self) -> &'static str {
        "tree"
    }

    fn train(&mut self, matrix: &FeatureMatrix) -> Result<(), RegressorError> {
        self.config.validate()?;
        if matrix.is_empty() {
            return Err(RegressorError::EmptyMatrix);
        }
        let mut rows: Vec<usize> = (0..matrix.n_rows()).collect();
        self.n_cols = matrix.n_cols();
        self.root = Some(self.grow(matrix, &mut rows, 0));
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        let mut node = self.root.as_ref().ok_or(RegressorError::Untrained)?;
        check_dim(self.n_cols, x)?;
        loop {
            match node {
                Node::Leaf(v) => return Ok(*v),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
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
    fn constant_targets_single_leaf() {
        let mut t = RegressionTree::new(TreeConfig::default());
        t.train(&one_feature(&[0.0, 1.0, 2.0], &[4.0, 4.0, 4.0])).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.predict(&[100.0]).unwrap(), 4.0);
    }

    #[test]
    fn obvious_stump() {
        let mut t = RegressionTree::new(TreeConfig {
            max_depth: Some(1),
            min_samples_leaf: 1,
        });
        t.train(&one_feature(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 10.0, 10.0]))
            .unwrap();
        match t.root.as_ref().unwrap() {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!(*threshold > 1.0 && *threshold <= 2.0);
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
        assert_eq!(t.predict(&[0.5]).unwrap(), 0.0);
        assert_eq!(t.predict(&[2.5]).unwrap(), 10.0);
    }

    #[test]
    fn split_ties_prefer_lower_column() {
        let m = FeatureMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![0.0, 1.0],
            vec![0.0; 2],
        );
        let mut t = RegressionTree::new(TreeConfig::default());
        t.train(&m).unwrap();
        assert!(matches!(t.root, Some(Node::Split { feature: 0, .. })));
    }

    #[test]
    fn memorizes_distinct_rows() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 17) % 40) as f64 * 0.25).collect();
        let ys: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64 * 0.5).collect();
        let m = one_feature(&xs, &ys);
        let mut t = RegressionTree::new(TreeConfig::default());
        t.train(&m).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(t.predict(&[*x]).unwrap(), *y);
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let mut t = RegressionTree::new(TreeConfig {
            max_depth: None,
            min_samples_leaf: 3,
        });
        t.train(&one_feature(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        assert_eq!(t.depth(), 0);
    }
}
