//! Two-feature intersectional audits.
//!
//! For a race feature A1 held at one level, the disparity induced by a
//! religion feature A2 is `|MAE(level[A1], High[A2]) - MAE(level[A1], Low[A2])|`.
//! Averaging that over every A2 gives one number per (A1, level); the gap
//! between the High and Low averages summarises how unevenly A1's groups
//! are treated once a second attribute is taken into account.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};
use crate::fairness::{self, AuditReport, Level, Provenance};
use crate::regressors::TrainedModel;

/// How per-A2 deltas are combined into the per-(A1, level) average.
///
/// `SampleCount` weights each cell by the size of its two subgroups. Those
/// two subgroups always partition the samples at that A1 level, so the
/// weights only differ between cells when some cells are skipped; with no
/// skips both modes agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    SampleCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectOptions {
    pub weighting: Weighting,
    /// Subgroups smaller than this make the cell unmeasurable.
    pub min_subgroup: usize,
}

impl Default for IntersectOptions {
    fn default() -> Self {
        IntersectOptions {
            weighting: Weighting::Uniform,
            min_subgroup: 3,
        }
    }
}

/// Sizes of the four (A1 level, A2 level) subgroups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubgroupCounts {
    pub low_low: usize,
    pub low_high: usize,
    pub high_low: usize,
    pub high_high: usize,
}

impl SubgroupCounts {
    pub fn get(&self, a1: Level, a2: Level) -> usize {
        match (a1, a2) {
            (Level::Low, Level::Low) => self.low_low,
            (Level::Low, Level::High) => self.low_high,
            (Level::High, Level::Low) => self.high_low,
            (Level::High, Level::High) => self.high_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Measured { mae_a2_low: f64, mae_a2_high: f64, delta: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionCell {
    pub a1: String,
    pub a1_level: Level,
    pub a2: String,
    pub n_subgroups: SubgroupCounts,
    pub outcome: CellOutcome,
}

impl IntersectionCell {
    pub fn delta(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Measured { delta, .. } => Some(delta),
            CellOutcome::Skipped { .. } => None,
        }
    }

    fn weight(&self, weighting: Weighting) -> f64 {
        match weighting {
            Weighting::Uniform => 1.0,
            Weighting::SampleCount => {
                (self.n_subgroups.get(self.a1_level, Level::Low) + self.n_subgroups.get(self.a1_level, Level::High))
                    as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAverage {
    pub a1: String,
    pub level: Level,
    /// `None` when every cell at this level was skipped.
    pub avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionReport {
    pub provenance: Provenance,
    pub weighting: Weighting,
    pub race_features: Vec<String>,
    pub religion_features: Vec<String>,
    pub cells: Vec<IntersectionCell>,
    pub averages: Vec<LevelAverage>,
}

impl IntersectionReport {
    pub fn cell(&self, a1: &str, level: Level, a2: &str) -> Option<&IntersectionCell> {
        self.cells
            .iter()
            .find(|c| c.a1 == a1 && c.a1_level == level && c.a2 == a2)
    }

    pub fn average(&self, a1: &str, level: Level) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.a1 == a1 && a.level == level)
            .and_then(|a| a.avg)
    }

    /// `|Avg_high - Avg_low|` for `a1`.
    pub fn delta_avg(&self, a1: &str) -> Option<f64> {
        Some((self.average(a1, Level::High)? - self.average(a1, Level::Low)?).abs())
    }

    pub fn max_cell_delta(&self, a1: &str) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| c.a1 == a1)
            .filter_map(IntersectionCell::delta)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
    }

    /// Rows are A2 features then `Avg.` and `|ΔAvg.|`; each A1 contributes a
    /// High and a Low column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["A2".to_string()];
        for a1 in &self.race_features {
            header.push(format!("{a1} High"));
            header.push(format!("{a1} Low"));
        }
        w.write_record(&header)?;
        for row in self.table_rows() {
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| A2 |");
        for a1 in &self.race_features {
            let _ = write!(out, " {a1} High | {a1} Low |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(2 * self.race_features.len()));
        out.push('\n');
        for row in self.table_rows() {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out
    }

    fn table_rows(&self) -> Vec<Vec<String>> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "skipped".to_string(), |d| format!("{d:.2}"));
        let mut rows = Vec::new();
        for a2 in &self.religion_features {
            let mut row = vec![a2.clone()];
            for a1 in &self.race_features {
                for level in [Level::High, Level::Low] {
                    row.push(fmt(self.cell(a1, level, a2).and_then(IntersectionCell::delta)));
                }
            }
            rows.push(row);
        }
        let mut avg = vec!["Avg.".to_string()];
        let mut gap = vec!["|ΔAvg.|".to_string()];
        for a1 in &self.race_features {
            avg.push(fmt(self.average(a1, Level::High)));
            avg.push(fmt(self.average(a1, Level::Low)));
            gap.push(fmt(self.delta_avg(a1)));
            gap.push(String::new());
        }
        rows.push(avg);
        rows.push(gap);
        rows
    }
}

pub fn intersect_audit(
    model: &TrainedModel,
    test: &EncodedDataset,
    race_features: &[String],
    religion_features: &[String],
) -> Result<IntersectionReport> {
    intersect_audit_with(model, test, race_features, religion_features, IntersectOptions::default())
}

pub fn intersect_audit_with(
    model: &TrainedModel,
    test: &EncodedDataset,
    race_features: &[String],
    religion_features: &[String],
    options: IntersectOptions,
) -> Result<IntersectionReport> {
    let pred = model.predict_dataset(test)?;
    intersect_predictions(test, &pred, race_features, religion_features, options)
}

fn levels_for(test: &EncodedDataset, feature: &str) -> std::result::Result<Vec<Level>, String> {
    let t = fairness::stored_threshold(test, feature).map_err(|e| e.to_string())?;
    let values = test.group_values(feature).map_err(|e| e.to_string())?;
    Ok(values.iter().map(|&v| Level::of(v, t)).collect())
}

/// Intersectional audit from precomputed predictions.
pub fn intersect_predictions(
    test: &EncodedDataset,
    pred: &[f64],
    race_features: &[String],
    religion_features: &[String],
    options: IntersectOptions,
) -> Result<IntersectionReport> {
    if pred.len() != test.len() {
        return Err(Error::LengthMismatch(pred.len(), test.len()));
    }
    let y = test.targets();
    let min = options.min_subgroup.max(1);

    let religion_levels: Vec<_> = religion_features.iter().map(|f| levels_for(test, f)).collect();
    let mut cells = Vec::new();
    for a1 in race_features {
        let a1_levels = levels_for(test, a1);
        for level in [Level::High, Level::Low] {
            for (a2, a2_levels) in religion_features.iter().zip(&religion_levels) {
                let (a1_levels, a2_levels) = match (&a1_levels, a2_levels) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(e), _) | (_, Err(e)) => {
                        cells.push(IntersectionCell {
                            a1: a1.clone(),
                            a1_level: level,
                            a2: a2.clone(),
                            n_subgroups: SubgroupCounts::default(),
                            outcome: CellOutcome::Skipped { reason: e.clone() },
                        });
                        continue;
                    }
                };
                let mut counts = SubgroupCounts::default();
                let mut low = Vec::new();
                let mut high = Vec::new();
                for i in 0..y.len() {
                    match (a1_levels[i], a2_levels[i]) {
                        (Level::Low, Level::Low) => counts.low_low += 1,
                        (Level::Low, Level::High) => counts.low_high += 1,
                        (Level::High, Level::Low) => counts.high_low += 1,
                        (Level::High, Level::High) => counts.high_high += 1,
                    }
                    if a1_levels[i] == level {
                        match a2_levels[i] {
                            Level::Low => low.push(i),
                            Level::High => high.push(i),
                        }
                    }
                }
                let outcome = if low.len() < min || high.len() < min {
                    CellOutcome::Skipped {
                        reason: format!(
                            "subgroup sizes {}/{} below minimum {min}",
                            low.len(),
                            high.len()
                        ),
                    }
                } else {
                    let mae_a2_low = fairness::subset_mae(&y, pred, &low)?;
                    let mae_a2_high = fairness::subset_mae(&y, pred, &high)?;
                    CellOutcome::Measured {
                        mae_a2_low,
                        mae_a2_high,
                        delta: (mae_a2_high - mae_a2_low).abs(),
                    }
                };
                cells.push(IntersectionCell {
                    a1: a1.clone(),
                    a1_level: level,
                    a2: a2.clone(),
                    n_subgroups: counts,
                    outcome,
                });
            }
        }
    }

    let mut averages = Vec::new();
    for a1 in race_features {
        for level in [Level::High, Level::Low] {
            let (num, den) = cells
                .iter()
                .filter(|c| &c.a1 == a1 && c.a1_level == level)
                .filter_map(|c| c.delta().map(|d| (d, c.weight(options.weighting))))
                .fold((0.0, 0.0), |(n, d), (delta, w)| (n + w * delta, d + w));
            averages.push(LevelAverage {
                a1: a1.clone(),
                level,
                avg: (den > 0.0).then(|| num / den),
            });
        }
    }

    Ok(IntersectionReport {
        provenance: Provenance::of(test, pred),
        weighting: options.weighting,
        race_features: race_features.to_vec(),
        religion_features: religion_features.to_vec(),
        cells,
        averages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindSpotConfig {
    /// Single-feature ΔMAE below this counts as "looks fair". `None` uses
    /// the median single-feature ΔMAE.
    pub fair_threshold: Option<f64>,
    /// Intersectional disparity above `multiple * fair_threshold` is large.
    pub multiple: f64,
}

impl Default for BlindSpotConfig {
    fn default() -> Self {
        BlindSpotConfig {
            fair_threshold: None,
            multiple: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindSpot {
    pub feature: String,
    pub single_delta: f64,
    pub delta_avg: Option<f64>,
    pub max_cell_delta: Option<f64>,
    pub fair_threshold: f64,
}

/// Flag A1 features that look fair alone but not in combination.
pub fn blind_spot_screen(
    single: &AuditReport,
    inter: &IntersectionReport,
    config: BlindSpotConfig,
) -> Result<Vec<BlindSpot>> {
    if single.provenance != inter.provenance {
        return Err(Error::MismatchedProvenance);
    }
    let fair_threshold = match config.fair_threshold {
        Some(t) => t,
        None => {
            let mut deltas: Vec<f64> = single.records.iter().map(|r| r.delta_mae).collect();
            if deltas.is_empty() {
                return Ok(Vec::new());
            }
            crate::dataset::median(&mut deltas)
        }
    };
    let large = config.multiple * fair_threshold;
    let mut flagged = Vec::new();
    for a1 in &inter.race_features {
        let Some(record) = single.record(a1) else {
            continue;
        };
        let delta_avg = inter.delta_avg(a1);
        let max_cell = inter.max_cell_delta(a1);
        let exceeds = |v: Option<f64>| v.is_some_and(|d| d > large);
        if record.delta_mae < fair_threshold && (exceeds(delta_avg) || exceeds(max_cell)) {
            flagged.push(BlindSpot {
                feature: a1.clone(),
                single_delta: record.delta_mae,
                delta_avg,
                max_cell_delta: max_cell,
                fair_threshold,
            });
        }
    }
    Ok(flagged)
}
