//! The five regressor families behind one training interface.
//!
//! Every family accepts optional per-sample weights: trees use weighted
//! impurity and weighted leaf means, the linear model solves weighted least
//! squares, and the network weights its loss terms. Passing no weights is
//! exactly equivalent to passing all ones.

mod boosting;
mod forest;
mod linear;
pub mod metrics;
mod mlp;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boosting::GradientBoosting;
pub use forest::RandomForest;
pub use linear::LinearModel;
pub use metrics::{mae, r2};
pub use mlp::{DenseLayer, Mlp, MlpConfig};
pub use tree::{Node, RegressionTree, TreeParams};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};

/// Training sets smaller than this are rejected.
pub const MIN_TRAIN_SAMPLES: usize = 10;

/// Version stamped into saved model documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    DecisionTree,
    RandomForest,
    GradientBoosting,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::Mlp,
    ];

    /// Short label used in table layouts.
    pub fn short(self) -> &'static str {
        match self {
            ModelKind::Linear => "LR",
            ModelKind::DecisionTree => "DT",
            ModelKind::RandomForest => "RF",
            ModelKind::GradientBoosting => "GB",
            ModelKind::Mlp => "MLP",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::DecisionTree => "decision_tree",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoosting => "gradient_boosting",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(ModelKind::Linear),
            "decision_tree" | "dt" | "tree" => Ok(ModelKind::DecisionTree),
            "random_forest" | "rf" | "forest" => Ok(ModelKind::RandomForest),
            "gradient_boosting" | "gb" | "gbm" => Ok(ModelKind::GradientBoosting),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidRequest(format!("unknown model kind `{other}`"))),
        }
    }
}

/// A model family, its hyperparameters and its seed.
///
/// Recognised hyperparameters (defaults in brackets):
/// - decision_tree: `max_depth` [10]
/// - random_forest: `n_estimators` [100], `max_depth` [unbounded]
/// - gradient_boosting: `n_estimators` [100], `learning_rate` [0.1], `max_depth` [3]
/// - mlp: `hidden_layers` [2], `hidden_units` [64], `learning_rate` [0.01],
///   `max_epochs` [2000], `patience` [20], `validation_fraction` [0.1]
/// - all trees: `min_samples_split` [2], `min_samples_leaf` [1]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hyperparams: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.hyperparams.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str, default: f64) -> f64 {
        self.hyperparams.get(name).copied().unwrap_or(default)
    }

    fn count(&self, name: &str, default: usize) -> usize {
        self.hyperparams
            .get(name)
            .map_or(default, |v| if v.is_finite() && *v >= 0.0 { *v as usize } else { default })
    }

    fn tree_params(&self, default_depth: usize) -> TreeParams {
        TreeParams {
            max_depth: self.count("max_depth", default_depth),
            min_samples_split: self.count("min_samples_split", 2),
            min_samples_leaf: self.count("min_samples_leaf", 1),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        let d = MlpConfig::default();
        MlpConfig {
            hidden_layers: self.count("hidden_layers", d.hidden_layers),
            hidden_units: self.count("hidden_units", d.hidden_units),
            learning_rate: self.param("learning_rate", d.learning_rate),
            max_epochs: self.count("max_epochs", d.max_epochs),
            patience: self.count("patience", d.patience),
            validation_fraction: self.param("validation_fraction", d.validation_fraction),
        }
    }
}

/// Per-sample training weights in `(0, 1]` with maximum exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0 && **w <= 1.0)) {
            return Err(Error::InvalidWeights(format!("{bad} is outside (0, 1]")));
        }
        if !weights.contains(&1.0) {
            return Err(Error::InvalidWeights("no weight equals 1".into()));
        }
        Ok(WeightVector(weights))
    }

    pub fn ones(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    DecisionTree(RegressionTree),
    RandomForest(RandomForest),
    GradientBoosting(GradientBoosting),
    Mlp(Mlp),
}

/// A fitted model. Immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub params: ModelParams,
}

pub fn train(spec: &ModelSpec, data: &EncodedDataset, weights: Option<&WeightVector>) -> Result<TrainedModel> {
    let n = data.len();
    if n < MIN_TRAIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_TRAIN_SAMPLES,
            got: n,
        });
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != n => return Err(Error::LengthMismatch(w.len(), n)),
        Some(w) => w.as_slice().to_vec(),
        None => vec![1.0; n],
    };
    let d = data.n_features();
    for (i, s) in data.samples.iter().enumerate() {
        if s.x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.x.len(),
            });
        }
        if let Some(j) = s.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: i, column: j });
        }
        if !s.y.is_finite() {
            return Err(Error::InvalidRequest(format!("non-finite target at row {i}")));
        }
    }

    let rows = data.rows();
    let y = data.targets();
    let params = match spec.kind {
        ModelKind::Linear => ModelParams::Linear(LinearModel::fit(&rows, &y, &w)),
        ModelKind::DecisionTree => {
            let cols = tree::Columns::from_rows(&rows);
            ModelParams::DecisionTree(RegressionTree::fit(&cols, &y, &w, (0..n).collect(), &spec.tree_params(10)))
        }
        ModelKind::RandomForest => {
            let cols = tree::Columns::from_rows(&rows);
            ModelParams::RandomForest(RandomForest::fit(
                &cols,
                &y,
                &w,
                spec.count("n_estimators", 100).max(1),
                &spec.tree_params(usize::MAX),
                spec.seed,
            ))
        }
        ModelKind::GradientBoosting => {
            let cols = tree::Columns::from_rows(&rows);
            ModelParams::GradientBoosting(GradientBoosting::fit(
                &cols,
                &y,
                &w,
                spec.count("n_estimators", 100),
                spec.param("learning_rate", 0.1),
                &spec.tree_params(3),
            ))
        }
        ModelKind::Mlp => ModelParams::Mlp(Mlp::fit(&rows, &y, &w, &spec.mlp_config(), spec.seed)),
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        feature_names: data.feature_names.clone(),
        params,
    })
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Predict one value per row. Rows must follow `feature_names` order.
    pub fn predict<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        let d = self.n_features();
        let refs: Vec<&[f64]> = rows.iter().map(AsRef::as_ref).collect();
        if let Some(bad) = refs.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(match &self.params {
            ModelParams::Linear(m) => refs.iter().map(|r| m.predict_row(r)).collect(),
            ModelParams::DecisionTree(m) => refs.iter().map(|r| m.predict_row(r)).collect(),
            ModelParams::RandomForest(m) => refs.iter().map(|r| m.predict_row(r)).collect(),
            ModelParams::GradientBoosting(m) => refs.iter().map(|r| m.predict_row(r)).collect(),
            ModelParams::Mlp(m) => m.predict_rows(&refs),
        })
    }

    /// Predict a dataset after checking its columns match the training order.
    pub fn predict_dataset(&self, data: &EncodedDataset) -> Result<Vec<f64>> {
        if data.feature_names != self.feature_names {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: data.n_features(),
            });
        }
        self.predict(&data.rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(json)?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.format_version));
        }
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// MAE and R² of a model on a dataset.
pub fn evaluate(model: &TrainedModel, data: &EncodedDataset) -> Result<(f64, f64)> {
    let pred = model.predict_dataset(data)?;
    let y = data.targets();
    Ok((mae(&y, &pred)?, r2(&y, &pred)?))
}
