//! Per-cell run results, summaries and the effectiveness rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::DisparityRecord;
use crate::regressors::ModelKind;

/// Label used for the no-mitigation column.
pub const BASELINE: &str = "none";

/// A mitigation has to cut the baseline ΔMAE by strictly more than this.
pub const EFFECTIVE_IMPROVEMENT: f64 = 0.25;

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model: ModelKind,
    pub split: String,
    pub feature: String,
    /// A mitigation name, or [`BASELINE`].
    pub mitigation: String,
}

impl CellKey {
    pub fn is_baseline(&self) -> bool {
        self.mitigation == BASELINE
    }

    pub fn baseline(&self) -> CellKey {
        CellKey {
            mitigation: BASELINE.to_string(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: CellKey,
    pub run: usize,
    pub seed: u64,
    pub mae: f64,
    pub r2: f64,
    pub disparity: DisparityRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<MeanStd> {
        if values.is_empty() {
            return Err(Error::EmptyCell);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(MeanStd {
            mean,
            std: var.max(0.0).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub runs: usize,
    pub mae: MeanStd,
    pub r2: MeanStd,
    pub delta_mae: MeanStd,
    /// Relative ΔMAE improvement over the baseline; absent on baselines and
    /// when the baseline mean is zero.
    pub improvement: Option<f64>,
    pub effective: bool,
    /// Set when the mark could not be computed, e.g. a zero baseline.
    pub flag: Option<String>,
}

/// Mean and population standard deviation of every metric in one cell.
pub fn summarize(results: &[RunResult]) -> Result<CellSummary> {
    let first = results.first().ok_or(Error::EmptyCell)?;
    if let Some(other) = results.iter().find(|r| r.key != first.key) {
        return Err(Error::InvalidRequest(format!(
            "runs from different cells: {:?} and {:?}",
            first.key, other.key
        )));
    }
    let column = |f: fn(&RunResult) -> f64| MeanStd::of(&results.iter().map(f).collect::<Vec<_>>());
    Ok(CellSummary {
        key: first.key.clone(),
        runs: results.len(),
        mae: column(|r| r.mae)?,
        r2: column(|r| r.r2)?,
        delta_mae: column(|r| r.disparity.delta_mae)?,
        improvement: None,
        effective: false,
        flag: None,
    })
}

/// `(baseline - mitigated) / baseline`.
pub fn improvement(baseline: f64, mitigated: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((baseline - mitigated) / baseline)
}

pub fn is_effective(baseline: f64, mitigated: f64) -> Result<bool> {
    Ok(improvement(baseline, mitigated)? > EFFECTIVE_IMPROVEMENT)
}

/// Whether `mitigated` improves on `baseline` mean ΔMAE by more than 25%.
pub fn effectiveness_mark(baseline: &CellSummary, mitigated: &CellSummary) -> Result<bool> {
    if mitigated.key.baseline() != baseline.key {
        return Err(Error::InvalidRequest(format!(
            "{:?} is not the baseline of {:?}",
            baseline.key, mitigated.key
        )));
    }
    is_effective(baseline.delta_mae.mean, mitigated.delta_mae.mean)
}

/// Fill `improvement`, `effective` and `flag` on every mitigated summary
/// from its baseline in the same list.
pub fn mark_all(summaries: &mut [CellSummary]) {
    let baselines: std::collections::BTreeMap<CellKey, CellSummary> = summaries
        .iter()
        .filter(|s| s.key.is_baseline())
        .map(|s| (s.key.clone(), s.clone()))
        .collect();
    for s in summaries.iter_mut().filter(|s| !s.key.is_baseline()) {
        let Some(base) = baselines.get(&s.key.baseline()) else {
            s.flag = Some("baseline missing".into());
            continue;
        };
        match improvement(base.delta_mae.mean, s.delta_mae.mean) {
            Ok(gain) => {
                s.improvement = Some(gain);
                s.effective = gain > EFFECTIVE_IMPROVEMENT;
            }
            Err(e) => {
                s.effective = false;
                s.flag = Some(e.to_string());
            }
        }
    }
}
