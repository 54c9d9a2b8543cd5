//! Group disparity on continuous sensitive features.
//!
//! A sensitive proportion is cut at the midpoint of its observed range:
//! samples strictly below go to the Low group, everything else to High. The
//! disparity of a model is the absolute gap between the two groups' mean
//! absolute errors, measured in raw target units.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};
use crate::regressors::{self, ModelSpec, TrainedModel};
use crate::seed;

/// `(max + min) / 2` over the finite values.
pub fn threshold(values: &[f64]) -> Result<f64> {
    let (min, max) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return Err(Error::DegenerateFeature);
    }
    Ok(0.5 * (max + min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    High,
}

impl Level {
    pub fn of(value: f64, threshold: f64) -> Level {
        if value < threshold {
            Level::Low
        } else {
            Level::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "Low",
            Level::High => "High",
        }
    }
}

/// Low/High membership for one sensitive feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub feature: String,
    pub threshold: f64,
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl GroupAssignment {
    pub fn n(&self) -> usize {
        self.low.len() + self.high.len()
    }

    pub fn level_of(&self, n: usize) -> Vec<Level> {
        let mut out = vec![Level::High; n];
        for &i in &self.low {
            out[i] = Level::Low;
        }
        out
    }

    /// The smaller group, ties going to Low.
    pub fn minority(&self) -> Level {
        if self.high.len() < self.low.len() {
            Level::High
        } else {
            Level::Low
        }
    }

    pub fn indices(&self, level: Level) -> &[usize] {
        match level {
            Level::Low => &self.low,
            Level::High => &self.high,
        }
    }

    fn require_both(&self) -> Result<()> {
        if self.low.is_empty() {
            return Err(Error::EmptyGroup {
                feature: self.feature.clone(),
                side: "Low",
            });
        }
        if self.high.is_empty() {
            return Err(Error::EmptyGroup {
                feature: self.feature.clone(),
                side: "High",
            });
        }
        Ok(())
    }
}

/// Partition `data` on `feature` at threshold `t`. Errors if either side is
/// empty.
pub fn assign_groups(data: &EncodedDataset, feature: &str, t: f64) -> Result<GroupAssignment> {
    let values = data.group_values(feature)?;
    let groups = partition_values(feature, &values, t);
    groups.require_both()?;
    Ok(groups)
}

/// Like [`assign_groups`] but with the dataset's stored population threshold.
pub fn assign_stored(data: &EncodedDataset, feature: &str) -> Result<GroupAssignment> {
    let t = stored_threshold(data, feature)?;
    assign_groups(data, feature, t)
}

pub fn stored_threshold(data: &EncodedDataset, feature: &str) -> Result<f64> {
    match data.thresholds.get(feature) {
        Some(&t) => Ok(t),
        None if data.sensitive_index(feature).is_some() => Err(Error::DegenerateFeature),
        None => Err(Error::UnknownFeature(feature.to_string())),
    }
}

pub(crate) fn partition_values(feature: &str, values: &[f64], t: f64) -> GroupAssignment {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match Level::of(v, t) {
            Level::Low => low.push(i),
            Level::High => high.push(i),
        }
    }
    GroupAssignment {
        feature: feature.to_string(),
        threshold: t,
        low,
        high,
    }
}

/// Group errors for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityRecord {
    pub feature: String,
    pub n_low: usize,
    pub n_high: usize,
    pub mae_low: f64,
    pub mae_high: f64,
    pub delta_mae: f64,
}

impl DisparityRecord {
    pub fn new(feature: &str, n_low: usize, n_high: usize, mae_low: f64, mae_high: f64) -> Self {
        DisparityRecord {
            feature: feature.to_string(),
            n_low,
            n_high,
            mae_low,
            mae_high,
            delta_mae: (mae_low - mae_high).abs(),
        }
    }
}

pub(crate) fn subset_mae(y: &[f64], pred: &[f64], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(indices.iter().map(|&i| (y[i] - pred[i]).abs()).sum::<f64>() / indices.len() as f64)
}

/// Disparity from precomputed predictions.
pub fn disparity_from_predictions(y: &[f64], pred: &[f64], groups: &GroupAssignment) -> Result<DisparityRecord> {
    if y.len() != pred.len() {
        return Err(Error::LengthMismatch(y.len(), pred.len()));
    }
    if let Some(&bad) = groups.low.iter().chain(&groups.high).find(|&&i| i >= y.len()) {
        return Err(Error::InvalidRequest(format!("group index {bad} out of range")));
    }
    groups.require_both()?;
    Ok(DisparityRecord::new(
        &groups.feature,
        groups.low.len(),
        groups.high.len(),
        subset_mae(y, pred, &groups.low)?,
        subset_mae(y, pred, &groups.high)?,
    ))
}

pub fn delta_mae(model: &TrainedModel, test: &EncodedDataset, groups: &GroupAssignment) -> Result<DisparityRecord> {
    let pred = model.predict_dataset(test)?;
    disparity_from_predictions(&test.targets(), &pred, groups)
}

/// Identifies the model and test set a report was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub predictions: u64,
    pub test: u64,
}

impl Provenance {
    pub fn of(test: &EncodedDataset, pred: &[f64]) -> Self {
        let predictions = seed::fingerprint(pred.iter().map(|v| v.to_le_bytes()));
        let test = seed::fingerprint(test.samples.iter().flat_map(|s| {
            [s.ward.as_bytes().to_vec(), s.year.to_le_bytes().to_vec(), s.y.to_le_bytes().to_vec()]
        }));
        Provenance { predictions, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFeature {
    pub feature: String,
    pub reason: String,
}

/// Single-feature audit over a list of sensitive features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub provenance: Provenance,
    pub records: Vec<DisparityRecord>,
    pub skipped: Vec<SkippedFeature>,
}

impl AuditReport {
    pub fn record(&self, feature: &str) -> Option<&DisparityRecord> {
        self.records.iter().find(|r| r.feature == feature)
    }

    /// `feature, n_low, n_high, mae_low, mae_high, delta_mae`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records_csv(&self.records, writer)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Feature | n Low | n High | MAE Low | MAE High | ΔMAE |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.2} | {:.2} | {:.2} |",
                r.feature, r.n_low, r.n_high, r.mae_low, r.mae_high, r.delta_mae
            );
        }
        for s in &self.skipped {
            let _ = writeln!(out, "| {} | - | - | - | - | skipped: {} |", s.feature, s.reason);
        }
        out
    }
}

pub fn write_records_csv<W: Write>(records: &[DisparityRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "n_low", "n_high", "mae_low", "mae_high", "delta_mae"])?;
    for r in records {
        w.write_record([
            r.feature.clone(),
            r.n_low.to_string(),
            r.n_high.to_string(),
            r.mae_low.to_string(),
            r.mae_high.to_string(),
            r.delta_mae.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Audit from precomputed predictions; groups use the stored thresholds.
pub fn audit_predictions(test: &EncodedDataset, pred: &[f64], features: &[String]) -> Result<AuditReport> {
    if pred.len() != test.len() {
        return Err(Error::LengthMismatch(pred.len(), test.len()));
    }
    let y = test.targets();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for feature in features {
        let outcome = assign_stored(test, feature).and_then(|g| disparity_from_predictions(&y, pred, &g));
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => skipped.push(SkippedFeature {
                feature: feature.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(AuditReport {
        provenance: Provenance::of(test, pred),
        records,
        skipped,
    })
}

/// One [`DisparityRecord`] per auditable feature; the rest are listed as
/// skipped with the reason.
pub fn single_feature_audit(model: &TrainedModel, test: &EncodedDataset, features: &[String]) -> Result<AuditReport> {
    let pred = model.predict_dataset(test)?;
    audit_predictions(test, &pred, features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub feature: String,
    pub delta_with: f64,
    pub delta_without: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub records: Vec<AblationRecord>,
    pub skipped: Vec<SkippedFeature>,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Feature | ΔMAE with | ΔMAE without | \\|Diff\\| |\n|---|---:|---:|---:|\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "| {} | {:.2} | {:.2} | {:.2} |",
                r.feature, r.delta_with, r.delta_without, r.abs_diff
            );
        }
        out
    }
}

/// Train with and without the sensitive input columns and compare the
/// disparity each model shows on the same groups.
pub fn ablation_audit(
    spec: &ModelSpec,
    train: &EncodedDataset,
    test: &EncodedDataset,
    sensitive: &[String],
) -> Result<AblationReport> {
    if sensitive.is_empty() {
        return Err(Error::InvalidRequest("ablation needs at least one sensitive feature".into()));
    }
    let in_inputs: Vec<String> = sensitive
        .iter()
        .filter(|f| train.feature_index(f).is_some())
        .cloned()
        .collect();
    if in_inputs.is_empty() {
        return Err(Error::InvalidRequest("none of the sensitive features are model inputs".into()));
    }
    let with = regressors::train(spec, train, None)?;
    let without = regressors::train(spec, &train.drop_features(&in_inputs)?, None)?;
    let report_with = single_feature_audit(&with, test, sensitive)?;
    let report_without = single_feature_audit(&without, &test.drop_features(&in_inputs)?, sensitive)?;

    let mut records = Vec::new();
    for a in &report_with.records {
        if let Some(b) = report_without.record(&a.feature) {
            records.push(AblationRecord {
                feature: a.feature.clone(),
                delta_with: a.delta_mae,
                delta_without: b.delta_mae,
                abs_diff: (a.delta_mae - b.delta_mae).abs(),
            });
        }
    }
    Ok(AblationReport {
        records,
        skipped: report_with.skipped,
    })
}
