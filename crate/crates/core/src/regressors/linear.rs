use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Weighted ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Diagonal jitter that had to be added to factor the Gram matrix.
    pub ridge: f64,
}

impl LinearModel {
    pub(crate) fn fit(rows: &[&[f64]], y: &[f64], w: &[f64]) -> Self {
        let p = rows.first().map_or(0, |r| r.len()) + 1;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        let mut aug = vec![0.0; p];
        for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
            aug[0] = 1.0;
            aug[1..].copy_from_slice(row);
            for a in 0..p {
                let wa = wi * aug[a];
                if wa == 0.0 {
                    continue;
                }
                rhs[a] += wa * yi;
                for b in a..p {
                    gram[(a, b)] += wa * aug[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }

        // singular Gram (e.g. a full one-hot block next to the intercept):
        // add jitter, escalating until the factorisation succeeds
        let mut ridge = 0.0;
        let beta = loop {
            let mut g = gram.clone();
            for a in 0..p {
                g[(a, a)] += ridge;
            }
            if let Some(chol) = g.cholesky() {
                let beta = chol.solve(&rhs);
                if beta.iter().all(|v| v.is_finite()) {
                    break beta;
                }
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
        };
        LinearModel {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            ridge,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}
