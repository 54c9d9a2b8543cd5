//! Fully connected ReLU network trained with Adam on a weighted squared
//! loss, full-batch, with early stopping on a held-out carve-out.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: 2,
            hidden_units: 64,
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 20,
            validation_fraction: 0.1,
        }
    }
}

/// Row-major `inputs x outputs` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.inputs, self.outputs, &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    /// Targets are standardised internally; predictions are mapped back.
    pub target_mean: f64,
    pub target_std: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

struct Net {
    w: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl Net {
    fn init(sizes: &[usize], rng: &mut seed::Rng) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = w.len() + 2 == sizes.len();
            // He-uniform for ReLU layers, Glorot-uniform for the linear head
            let limit = if last {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in.max(1) as f64).sqrt()
            };
            w.push(DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit)));
            b.push(DVector::zeros(fan_out));
        }
        Net { w, b }
    }

    /// Returns the activations of every layer, input first.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.w.len() - 1;
        for (k, (w, b)) in self.w.iter().zip(&self.b).enumerate() {
            let mut z = &acts[k] * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if k < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn output(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let acts = self.forward(x);
        acts.last().expect("at least one layer").column(0).into_owned()
    }

    fn gradients(&self, x: &DMatrix<f64>, t: &DVector<f64>, w: &DVector<f64>) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        let acts = self.forward(x);
        let sw: f64 = w.sum();
        let out = acts.last().expect("at least one layer");
        // d/dout of sum w (out - t)^2 / sum w
        let mut delta = DMatrix::from_fn(out.nrows(), 1, |i, _| 2.0 * w[i] * (out[(i, 0)] - t[i]) / sw);
        let mut gw = vec![DMatrix::zeros(0, 0); self.w.len()];
        let mut gb = vec![DVector::zeros(0); self.w.len()];
        for k in (0..self.w.len()).rev() {
            gw[k] = acts[k].transpose() * &delta;
            gb[k] = delta.row_sum().transpose();
            if k > 0 {
                let mut back = &delta * self.w[k].transpose();
                back.zip_apply(&acts[k], |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
        }
        (gw, gb)
    }

    fn loss(&self, x: &DMatrix<f64>, t: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let out = self.output(x);
        let sw = w.sum();
        out.iter().zip(t.iter()).zip(w.iter()).map(|((o, t), w)| w * (o - t).powi(2)).sum::<f64>() / sw
    }
}

struct Adam {
    lr: f64,
    step: i32,
    mw: Vec<DMatrix<f64>>,
    vw: Vec<DMatrix<f64>>,
    mb: Vec<DVector<f64>>,
    vb: Vec<DVector<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Net, lr: f64) -> Self {
        Adam {
            lr,
            step: 0,
            mw: net.w.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            vw: net.w.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            mb: net.b.iter().map(|v| DVector::zeros(v.len())).collect(),
            vb: net.b.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    fn update(&mut self, net: &mut Net, gw: &[DMatrix<f64>], gb: &[DVector<f64>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let lr = self.lr;
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for k in 0..net.w.len() {
            for (((p, g), m), v) in net.w[k]
                .iter_mut()
                .zip(gw[k].iter())
                .zip(self.mw[k].iter_mut())
                .zip(self.vw[k].iter_mut())
            {
                apply(p, *g, m, v);
            }
            for (((p, g), m), v) in net.b[k]
                .iter_mut()
                .zip(gb[k].iter())
                .zip(self.mb[k].iter_mut())
                .zip(self.vb[k].iter_mut())
            {
                apply(p, *g, m, v);
            }
        }
    }
}

fn design(rows: &[&[f64]], indices: &[usize]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(indices.len(), d, |i, j| rows[indices[i]][j])
}

impl Mlp {
    pub(crate) fn fit(rows: &[&[f64]], y: &[f64], weights: &[f64], config: &MlpConfig, seed: u64) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut rng = seed::rng(seed);

        let sw: f64 = weights.iter().sum();
        let target_mean = weights.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() / sw;
        let var = weights.iter().zip(y).map(|(w, v)| w * (v - target_mean).powi(2)).sum::<f64>() / sw;
        let target_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = ((config.validation_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let (val_idx, train_idx) = if n > 1 { order.split_at(n_val) } else { (&order[..0], &order[..]) };

        let xt = design(rows, train_idx);
        let tt = DVector::from_iterator(train_idx.len(), train_idx.iter().map(|&i| (y[i] - target_mean) / target_std));
        let wt = DVector::from_iterator(train_idx.len(), train_idx.iter().map(|&i| weights[i]));
        let xv = design(rows, val_idx);
        let tv = DVector::from_iterator(val_idx.len(), val_idx.iter().map(|&i| (y[i] - target_mean) / target_std));
        let wv = DVector::from_iterator(val_idx.len(), val_idx.iter().map(|&i| weights[i]));

        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(config.hidden_units, config.hidden_layers));
        sizes.push(1);
        let mut net = Net::init(&sizes, &mut rng);
        let mut adam = Adam::new(&net, config.learning_rate);

        let has_val = !val_idx.is_empty() && wv.sum() > 0.0;
        let mut best = (net.w.clone(), net.b.clone());
        let mut best_loss = f64::INFINITY;
        let mut best_epoch = 0;
        let mut epochs_run = 0;
        for epoch in 0..config.max_epochs {
            let (gw, gb) = net.gradients(&xt, &tt, &wt);
            adam.update(&mut net, &gw, &gb);
            epochs_run = epoch + 1;
            let loss = if has_val { net.loss(&xv, &tv, &wv) } else { net.loss(&xt, &tt, &wt) };
            if !loss.is_finite() {
                break;
            }
            if loss < best_loss {
                best_loss = loss;
                best_epoch = epochs_run;
                best = (net.w.clone(), net.b.clone());
            } else if epochs_run - best_epoch >= config.patience {
                break;
            }
        }
        net.w = best.0;
        net.b = best.1;

        let layers = net
            .w
            .iter()
            .zip(&net.b)
            .map(|(w, b)| DenseLayer {
                inputs: w.nrows(),
                outputs: w.ncols(),
                weights: w.transpose().iter().copied().collect(),
                bias: b.iter().copied().collect(),
            })
            .collect();
        Mlp {
            layers,
            target_mean,
            target_std,
            epochs_run,
            best_epoch,
        }
    }

    pub fn predict_rows(&self, rows: &[&[f64]]) -> Vec<f64> {
        if rows.is_empty() {
            return Vec::new();
        }
        let net = Net {
            w: self.layers.iter().map(DenseLayer::weight_matrix).collect(),
            b: self.layers.iter().map(|l| DVector::from_vec(l.bias.clone())).collect(),
        };
        let idx: Vec<usize> = (0..rows.len()).collect();
        net.output(&design(rows, &idx))
            .iter()
            .map(|v| v * self.target_std + self.target_mean)
            .collect()
    }
}
