use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Columns, RegressionTree, TreeParams};
use crate::seed;

/// Bagged regression trees; every tree sees a bootstrap sample and all
/// features at every split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub(crate) fn fit(cols: &Columns, y: &[f64], w: &[f64], n_trees: usize, params: &TreeParams, seed: u64) -> Self {
        let n = cols.n_rows();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed::child(seed, t as u64));
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                // bootstrap multiplicity folds into the sample weight
                let boot_w: Vec<f64> = counts.iter().zip(w).map(|(&c, &wi)| c as f64 * wi).collect();
                let indices = (0..n).filter(|&i| counts[i] > 0).collect();
                RegressionTree::fit(cols, y, &boot_w, indices, params)
            })
            .collect();
        RandomForest { trees }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}
