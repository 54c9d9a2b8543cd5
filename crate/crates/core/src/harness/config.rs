use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::FixtureConfig;
use crate::dataset::{FeatureSchema, SensitiveClass, SplitSpec};
use crate::error::{Error, Result};
use crate::mitigation::MitigationMethod;
use crate::regressors::{ModelKind, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Files { tables: Vec<PathBuf>, schema: PathBuf },
    Synthetic(FixtureConfig),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitiveFeatures {
    pub race: Vec<String>,
    pub religion: Vec<String>,
}

impl SensitiveFeatures {
    pub fn all(&self) -> Vec<String> {
        self.race.iter().chain(&self.religion).cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.race.is_empty() && self.religion.is_empty()
    }

    /// Every sensitive column the schema declares.
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        SensitiveFeatures {
            race: schema.sensitive_of(SensitiveClass::Race),
            religion: schema.sensitive_of(SensitiveClass::Religion),
        }
    }
}

/// Picks one (model, split) pair of the grid for a side analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTarget {
    pub model: ModelKind,
    /// A split name, see [`ExperimentConfig::split_names`].
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub cohort_a: BTreeSet<i32>,
    pub cohort_b: BTreeSet<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    /// Columns to draw trend plots for; empty means the target only.
    pub trend_columns: Vec<String>,
    /// Scatter plot of the target against each audited feature.
    pub scatter: bool,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            trend_columns: Vec::new(),
            scatter: true,
        }
    }
}

fn default_runs() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("wardfair-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub models: Vec<ModelSpec>,
    pub splits: Vec<SplitSpec>,
    /// Features to audit and mitigate; empty means every sensitive column of
    /// the schema.
    #[serde(default)]
    pub sensitive_features: SensitiveFeatures,
    #[serde(default)]
    pub mitigations: Vec<MitigationMethod>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub ablation: Option<AnalysisTarget>,
    #[serde(default)]
    pub intersectional: Option<AnalysisTarget>,
    #[serde(default)]
    pub drift: Option<DriftConfig>,
    #[serde(default)]
    pub plots: Option<PlotConfig>,
}

impl ExperimentConfig {
    /// Parse JSON; relative data paths are resolved against `base`.
    pub fn from_json_str(json: &str, base: Option<&Path>) -> Result<Self> {
        let mut config: ExperimentConfig =
            serde_json::from_str(json).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let (Some(base), DataSource::Files { tables, schema }) = (base, &mut config.data) {
            for p in tables.iter_mut().chain(std::iter::once(schema)) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path.parent())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Split labels, suffixed with their position when a label repeats.
    pub fn split_names(&self) -> Vec<String> {
        self.splits
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if self.splits.iter().filter(|o| o.label() == s.label()).count() > 1 {
                    format!("{}{}", s.label(), i + 1)
                } else {
                    s.label().to_string()
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.models.is_empty() || self.splits.is_empty() {
            return bad("need at least one model and one split".into());
        }
        let kinds: BTreeSet<ModelKind> = self.models.iter().map(|m| m.kind).collect();
        if kinds.len() != self.models.len() {
            return bad("each model kind may appear once".into());
        }
        for s in &self.splits {
            s.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        let names: BTreeSet<&str> = self.mitigations.iter().map(|m| m.name()).collect();
        if names.len() != self.mitigations.len() {
            return bad("each mitigation method may appear once".into());
        }
        for m in &self.mitigations {
            m.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        let splits = self.split_names();
        for (what, target) in [("ablation", &self.ablation), ("intersectional", &self.intersectional)] {
            if let Some(t) = target {
                if !kinds.contains(&t.model) {
                    return bad(format!("{what} model `{}` is not in the grid", t.model));
                }
                if !splits.contains(&t.split) {
                    return bad(format!("{what} split `{}` is not one of {splits:?}", t.split));
                }
            }
        }
        if let Some(d) = &self.drift {
            if d.cohort_a.is_empty() || d.cohort_b.is_empty() {
                return bad("drift cohorts must be non-empty".into());
            }
        }
        if let DataSource::Synthetic(f) = &self.data {
            f.validate()?;
        }
        Ok(())
    }

    pub fn load_schema(&self) -> Result<FeatureSchema> {
        match &self.data {
            DataSource::Files { schema, .. } => FeatureSchema::from_json_file(schema),
            DataSource::Synthetic(f) => Ok(super::synth::generate_fixture(f)?.schema),
        }
    }
}
