use serde::{Deserialize, Serialize};

use super::tree::{Columns, RegressionTree, TreeParams};

/// Least-squares gradient boosting: each stage fits the current residuals
/// and is added with shrinkage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub base: f64,
    pub learning_rate: f64,
    pub stages: Vec<RegressionTree>,
}

impl GradientBoosting {
    pub(crate) fn fit(
        cols: &Columns,
        y: &[f64],
        w: &[f64],
        n_stages: usize,
        learning_rate: f64,
        params: &TreeParams,
    ) -> Self {
        let n = y.len();
        let base = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        let mut current = vec![base; n];
        let mut stages = Vec::with_capacity(n_stages);
        let mut row = vec![0.0; cols.width()];
        for _ in 0..n_stages {
            let residual: Vec<f64> = y.iter().zip(&current).map(|(a, b)| a - b).collect();
            let tree = RegressionTree::fit(cols, &residual, w, (0..n).collect(), params);
            for (i, f) in current.iter_mut().enumerate() {
                cols.row_into(i, &mut row);
                *f += learning_rate * tree.predict_row(&row);
            }
            stages.push(tree);
        }
        GradientBoosting {
            base,
            learning_rate,
            stages,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.stages.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }
}
