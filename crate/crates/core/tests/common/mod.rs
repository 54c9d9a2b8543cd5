#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng as _;
use wardfair::dataset::{FeatureKind, Sample};
use wardfair::EncodedDataset;

/// A plain numeric design matrix with no sensitive metadata.
pub fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> EncodedDataset {
    let d = x.first().map_or(0, Vec::len);
    EncodedDataset {
        samples: x
            .into_iter()
            .zip(y)
            .enumerate()
            .map(|(i, (x, y))| Sample {
                ward: format!("W{i}"),
                year: 2016 + (i % 7) as i32,
                x,
                y,
                sensitive: Vec::new(),
            })
            .collect(),
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
        feature_kinds: vec![FeatureKind::Numeric; d],
        scaler_params: BTreeMap::new(),
        encoder_map: BTreeMap::new(),
        sensitive: Vec::new(),
        thresholds: BTreeMap::new(),
    }
}

/// `n` rows of `d` uniform features in [-2, 2] with a smooth nonlinear
/// target plus N(0, noise) noise.
pub fn friedman_like(n: usize, d: usize, noise: f64, seed: u64) -> EncodedDataset {
    let mut rng = wardfair::seed::rng(seed);
    let normal = rand_distr::Normal::new(0.0, noise.max(1e-300)).unwrap();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = 10.0 * (x[0] * x[1]).sin() + 5.0 * x[1] * x[1] + 3.0 * x[d - 1]
            + if noise > 0.0 { rand_distr::Distribution::sample(&normal, &mut rng) } else { 0.0 };
        xs.push(x);
        ys.push(y);
    }
    dataset(xs, ys)
}

/// Like [`dataset`] but with sensitive metadata. Each sensitive column is
/// also appended to `x` so ablation has something to drop.
pub fn with_sensitive(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    sensitive: &[(&str, wardfair::SensitiveClass, Vec<f64>)],
) -> EncodedDataset {
    let mut data = dataset(x, y);
    for (i, s) in data.samples.iter_mut().enumerate() {
        for (_, _, values) in sensitive {
            s.x.push(values[i]);
            s.sensitive.push(values[i]);
        }
    }
    for (name, class, values) in sensitive {
        data.feature_names.push(name.to_string());
        data.feature_kinds.push(FeatureKind::Numeric);
        data.sensitive.push(wardfair::dataset::SensitiveFeature {
            name: name.to_string(),
            class: *class,
        });
        if let Ok(t) = wardfair::fairness::threshold(values) {
            data.thresholds.insert(name.to_string(), t);
        }
    }
    data
}
