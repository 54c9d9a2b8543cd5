//! Ingestion, joining, encoding and splitting of ward-year tables.
//!
//! Input is one long-format CSV per topic (`ward, year, <feature...>`) plus a
//! JSON schema manifest. Tables are inner-joined on `(ward, year)`, cleaned,
//! then encoded: numeric columns are z-scored with population statistics of
//! the fitting rows, categorical columns are expanded one-hot. Targets stay in
//! raw units so every error metric downstream is in crimes per 1000 people.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveClass {
    Race,
    Religion,
}

impl SensitiveClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SensitiveClass::Race => "race",
            SensitiveClass::Religion => "religion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_class: Option<SensitiveClass>,
}

fn default_ward_column() -> String {
    "ward".to_string()
}

fn default_year_column() -> String {
    "year".to_string()
}

fn default_year_range() -> (i32, i32) {
    (2016, 2022)
}

/// Column manifest: kinds, the target, and sensitive-class membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub target: String,
    #[serde(default = "default_year_range")]
    pub year_range: (i32, i32),
    #[serde(default = "default_ward_column")]
    pub ward_column: String,
    #[serde(default = "default_year_column")]
    pub year_column: String,
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, year_range: (i32, i32)) -> Result<Self> {
        let target = columns
            .iter()
            .find(|c| c.kind == ColumnKind::Target)
            .map(|c| c.name.clone())
            .unwrap_or_default();
        let schema = FeatureSchema {
            columns,
            target,
            year_range,
            ward_column: default_ward_column(),
            year_column: default_year_column(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let schema: FeatureSchema = serde_json::from_str(json)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(Error::InvalidSchema("empty column name".into()));
            }
            if c.name == self.ward_column || c.name == self.year_column {
                return Err(Error::InvalidSchema(format!(
                    "`{}` collides with the key columns",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate column `{}`", c.name)));
            }
            if c.sensitive_class.is_some() && c.kind != ColumnKind::Numeric {
                return Err(Error::InvalidSchema(format!(
                    "sensitive column `{}` must be numeric",
                    c.name
                )));
            }
        }
        let targets: Vec<_> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Target)
            .collect();
        if targets.len() != 1 {
            return Err(Error::InvalidSchema(format!(
                "expected exactly one target column, found {}",
                targets.len()
            )));
        }
        if targets[0].name != self.target {
            return Err(Error::InvalidSchema(format!(
                "`target` names `{}` but the target column is `{}`",
                self.target, targets[0].name
            )));
        }
        if self.year_range.0 > self.year_range.1 {
            return Err(Error::InvalidSchema("year_range is reversed".into()));
        }
        Ok(())
    }

    /// Non-target columns in manifest order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Target)
    }

    pub fn sensitive(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.sensitive_class.is_some())
    }

    pub fn sensitive_of(&self, class: SensitiveClass) -> Vec<String> {
        self.sensitive()
            .filter(|c| c.sensitive_class == Some(class))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// A single parsed cell. Unparseable numbers become `Missing`, never zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub ward: String,
    pub year: i32,
    pub values: BTreeMap<String, Cell>,
}

/// One topic table as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub rows: Vec<RawRow>,
    /// Rows dropped because their year fell outside the schema's range.
    pub out_of_range: usize,
}

impl RawTable {
    pub fn columns(&self) -> BTreeSet<&str> {
        self.rows
            .iter()
            .flat_map(|r| r.values.keys().map(String::as_str))
            .collect()
    }

    /// Parse one CSV table. Only columns named in the schema are kept.
    pub fn from_reader<R: Read>(name: &str, reader: R, schema: &FeatureSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let position = |col: &str| headers.iter().position(|h| h == col);
        let ward_idx =
            position(&schema.ward_column).ok_or_else(|| Error::MissingColumn(schema.ward_column.clone()))?;
        let year_idx =
            position(&schema.year_column).ok_or_else(|| Error::MissingColumn(schema.year_column.clone()))?;
        let present: Vec<(usize, &ColumnSpec)> = schema
            .columns
            .iter()
            .filter_map(|c| position(&c.name).map(|i| (i, c)))
            .collect();

        let mut rows = Vec::new();
        let mut keys = BTreeSet::new();
        let mut out_of_range = 0;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let bad_row = |reason: String| Error::InvalidRow {
                table: name.to_string(),
                row: line + 1,
                reason,
            };
            let ward = record.get(ward_idx).unwrap_or("").to_string();
            if ward.is_empty() {
                return Err(bad_row("empty ward".into()));
            }
            let year_text = record.get(year_idx).unwrap_or("");
            let year: i32 = year_text
                .parse()
                .map_err(|_| bad_row(format!("year `{year_text}` is not an integer")))?;
            if year < schema.year_range.0 || year > schema.year_range.1 {
                out_of_range += 1;
                continue;
            }
            if !keys.insert((ward.clone(), year)) {
                return Err(Error::DuplicateKey {
                    table: name.to_string(),
                    ward,
                    year,
                });
            }
            let mut values = BTreeMap::new();
            for &(idx, col) in &present {
                let text = record.get(idx).unwrap_or("");
                let cell = match col.kind {
                    ColumnKind::Categorical if text.is_empty() => Cell::Missing,
                    ColumnKind::Categorical => Cell::Text(text.to_string()),
                    ColumnKind::Numeric | ColumnKind::Target => match text.parse::<f64>() {
                        Ok(v) if v.is_finite() => Cell::Number(v),
                        _ => Cell::Missing,
                    },
                };
                values.insert(col.name.clone(), cell);
            }
            rows.push(RawRow { ward, year, values });
        }
        Ok(RawTable {
            name: name.to_string(),
            rows,
            out_of_range,
        })
    }
}

/// Load one [`RawTable`] per path and check that every schema column is
/// provided by at least one of them.
pub fn load_tables<P: AsRef<Path>>(paths: &[P], schema: &FeatureSchema) -> Result<Vec<RawTable>> {
    let mut tables = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        tables.push(RawTable::from_reader(&name, file, schema)?);
    }
    check_coverage(&tables, schema)?;
    Ok(tables)
}

fn check_coverage(tables: &[RawTable], schema: &FeatureSchema) -> Result<()> {
    let covered: BTreeSet<&str> = tables.iter().flat_map(|t| t.columns()).collect();
    for col in &schema.columns {
        if !covered.contains(col.name.as_str()) {
            return Err(Error::MissingColumn(col.name.clone()));
        }
    }
    Ok(())
}

/// A joined, cleaned ward-year record. `cells` follows
/// [`FeatureSchema::feature_columns`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow {
    pub ward: String,
    pub year: i32,
    pub cells: Vec<Cell>,
    pub target: f64,
}

impl JoinedRow {
    pub fn number(&self, schema: &FeatureSchema, column: &str) -> Option<f64> {
        if column == schema.target {
            return Some(self.target);
        }
        let idx = schema.feature_columns().position(|c| c.name == column)?;
        self.cells[idx].as_number()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanOptions {
    /// Rows missing more than this fraction of feature cells are dropped.
    pub max_missing_fraction: f64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            max_missing_fraction: 0.2,
        }
    }
}

pub fn join_and_clean(tables: &[RawTable], schema: &FeatureSchema) -> Result<Vec<JoinedRow>> {
    join_and_clean_with(tables, schema, CleanOptions::default())
}

/// Inner-join on `(ward, year)`, drop incomplete rows, median-impute the
/// rest. Output is sorted by `(year, ward)`.
pub fn join_and_clean_with(
    tables: &[RawTable],
    schema: &FeatureSchema,
    options: CleanOptions,
) -> Result<Vec<JoinedRow>> {
    if tables.is_empty() {
        return Err(Error::EmptyJoin);
    }
    check_coverage(tables, schema)?;

    let indexed: Vec<HashMap<(&str, i32), &RawRow>> = tables
        .iter()
        .map(|t| t.rows.iter().map(|r| ((r.ward.as_str(), r.year), r)).collect())
        .collect();
    let mut keys: Vec<(&str, i32)> = indexed[0]
        .keys()
        .copied()
        .filter(|k| indexed[1..].iter().all(|t| t.contains_key(k)))
        .collect();
    keys.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));

    let features: Vec<&ColumnSpec> = schema.feature_columns().collect();
    let lookup = |key: &(&str, i32), column: &str| -> Cell {
        for table in &indexed {
            if let Some(cell) = table[key].values.get(column) {
                if !cell.is_missing() {
                    return cell.clone();
                }
            }
        }
        Cell::Missing
    };

    let mut rows = Vec::new();
    for key in &keys {
        let target = match lookup(key, &schema.target) {
            Cell::Number(v) => v,
            _ => continue,
        };
        if target < 0.0 {
            return Err(Error::InvalidRow {
                table: "joined".into(),
                row: rows.len(),
                reason: format!("negative target {target} for ({}, {})", key.0, key.1),
            });
        }
        let cells: Vec<Cell> = features.iter().map(|c| lookup(key, &c.name)).collect();
        let missing = cells.iter().filter(|c| c.is_missing()).count();
        if !features.is_empty() && missing as f64 > options.max_missing_fraction * features.len() as f64 {
            continue;
        }
        rows.push(JoinedRow {
            ward: key.0.to_string(),
            year: key.1,
            cells,
            target,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyJoin);
    }

    for (j, col) in features.iter().enumerate() {
        if !rows.iter().any(|r| r.cells[j].is_missing()) {
            continue;
        }
        let fill = match col.kind {
            ColumnKind::Numeric => {
                let mut vals: Vec<f64> = rows.iter().filter_map(|r| r.cells[j].as_number()).collect();
                if vals.is_empty() {
                    return Err(Error::MissingColumn(col.name.clone()));
                }
                Cell::Number(median(&mut vals))
            }
            _ => {
                // most frequent level, ties to the lexicographically smallest
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for r in &rows {
                    if let Cell::Text(s) = &r.cells[j] {
                        *counts.entry(s.as_str()).or_default() += 1;
                    }
                }
                let mode = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(k, _)| k.to_string())
                    .ok_or_else(|| Error::MissingColumn(col.name.clone()))?;
                Cell::Text(mode)
            }
        };
        for r in rows.iter_mut() {
            if r.cells[j].is_missing() {
                r.cells[j] = fill.clone();
            }
        }
    }
    Ok(rows)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Write joined rows back out in the canonical long format so they can be
/// reloaded as a single table.
pub fn write_joined_csv<W: Write>(rows: &[JoinedRow], schema: &FeatureSchema, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.ward_column.clone(), schema.year_column.clone()];
    header.extend(schema.feature_columns().map(|c| c.name.clone()));
    header.push(schema.target.clone());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.ward.clone(), r.year.to_string()];
        rec.extend(r.cells.iter().map(|c| match c {
            Cell::Number(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }));
        rec.push(format!("{}", r.target));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveFeature {
    pub name: String,
    pub class: SensitiveClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ward: String,
    pub year: i32,
    pub x: Vec<f64>,
    /// Crimes per 1000 population, unscaled.
    pub y: f64,
    /// Raw (unscaled) values of the sensitive columns, kept as metadata so
    /// groups stay computable after the columns are removed from `x`.
    pub sensitive: Vec<f64>,
}

/// The encoded design matrix plus everything needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
    pub scaler_params: BTreeMap<String, ScalerParams>,
    /// categorical column -> level -> one-hot column index
    pub encoder_map: BTreeMap<String, BTreeMap<String, usize>>,
    pub sensitive: Vec<SensitiveFeature>,
    /// Midpoint thresholds of the sensitive columns over the full (pre-split)
    /// population. Degenerate columns are absent.
    pub thresholds: BTreeMap<String, f64>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn sensitive_index(&self, name: &str) -> Option<usize> {
        self.sensitive.iter().position(|s| s.name == name)
    }

    pub fn sensitive_names(&self, class: Option<SensitiveClass>) -> Vec<String> {
        self.sensitive
            .iter()
            .filter(|s| class.is_none_or(|c| s.class == c))
            .map(|s| s.name.clone())
            .collect()
    }

    /// Values used for grouping: raw sensitive metadata when the feature is
    /// sensitive, otherwise the encoded column.
    pub fn group_values(&self, name: &str) -> Result<Vec<f64>> {
        if let Some(i) = self.sensitive_index(name) {
            return Ok(self.samples.iter().map(|s| s.sensitive[i]).collect());
        }
        let j = self
            .feature_index(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
        Ok(self.samples.iter().map(|s| s.x[j]).collect())
    }

    /// Same schema and metadata, samples restricted to `indices` (in order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        EncodedDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.with_samples(Vec::new())
        }
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Self {
        EncodedDataset {
            samples,
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            scaler_params: self.scaler_params.clone(),
            encoder_map: self.encoder_map.clone(),
            sensitive: self.sensitive.clone(),
            thresholds: self.thresholds.clone(),
        }
    }

    /// Remove feature columns from `x`. Sensitive metadata is untouched.
    pub fn drop_features(&self, names: &[String]) -> Result<Self> {
        let mut drop = BTreeSet::new();
        for name in names {
            let j = self
                .feature_index(name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            drop.insert(j);
        }
        let keep: Vec<usize> = (0..self.n_features()).filter(|j| !drop.contains(j)).collect();
        let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let mut out = self.with_samples(
            self.samples
                .iter()
                .map(|s| Sample {
                    x: keep.iter().map(|&j| s.x[j]).collect(),
                    ..s.clone()
                })
                .collect(),
        );
        out.feature_names = keep.iter().map(|&j| self.feature_names[j].clone()).collect();
        out.feature_kinds = keep.iter().map(|&j| self.feature_kinds[j]).collect();
        out.scaler_params.retain(|k, _| !names.contains(k));
        for levels in out.encoder_map.values_mut() {
            levels.retain(|_, idx| remap.contains_key(idx));
            for idx in levels.values_mut() {
                *idx = remap[idx];
            }
        }
        out.encoder_map.retain(|_, levels| !levels.is_empty());
        Ok(out)
    }

    /// Recover the categorical level of `column` for a sample; `None` for an
    /// all-zeros block (unseen level).
    pub fn decode_category(&self, sample: &Sample, column: &str) -> Option<String> {
        self.encoder_map
            .get(column)?
            .iter()
            .find(|(_, &idx)| sample.x[idx] == 1.0)
            .map(|(level, _)| level.clone())
    }

    /// Features followed by `__ward`, `__year`, `__target`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.extend(["__ward", "__year", "__target"].map(String::from));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| format!("{v}")).collect();
            rec.push(s.ward.clone());
            rec.push(s.year.to_string());
            rec.push(format!("{}", s.y));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ColumnEncoding {
    Numeric { name: String, params: ScalerParams },
    Categorical { name: String, levels: Vec<String> },
}

/// Fitted scaler/encoder parameters, reusable on rows outside the fitting set.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    schema: FeatureSchema,
    layout: Vec<ColumnEncoding>,
}

impl Encoder {
    pub fn fit(rows: &[JoinedRow], schema: &FeatureSchema, fit_on: &[usize]) -> Result<Self> {
        if fit_on.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&bad) = fit_on.iter().find(|&&i| i >= rows.len()) {
            return Err(Error::InvalidRequest(format!("fit_on index {bad} out of range")));
        }
        let mut layout = Vec::new();
        for (j, col) in schema.feature_columns().enumerate() {
            match col.kind {
                ColumnKind::Numeric => {
                    let vals: Vec<f64> = fit_on
                        .iter()
                        .map(|&i| rows[i].cells[j].as_number().unwrap_or(f64::NAN))
                        .collect();
                    if vals.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidRow {
                            table: "joined".into(),
                            row: j,
                            reason: format!("column `{}` has non-numeric cells", col.name),
                        });
                    }
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let mut std = var.sqrt();
                    // zero-variance columns are kept, centred only
                    if std <= 1e-12 * mean.abs().max(1.0) {
                        std = 1.0;
                    }
                    layout.push(ColumnEncoding::Numeric {
                        name: col.name.clone(),
                        params: ScalerParams { mean, std },
                    });
                }
                ColumnKind::Categorical => {
                    let levels: BTreeSet<String> = fit_on
                        .iter()
                        .filter_map(|&i| match &rows[i].cells[j] {
                            Cell::Text(s) => Some(s.clone()),
                            _ => None,
                        })
                        .collect();
                    layout.push(ColumnEncoding::Categorical {
                        name: col.name.clone(),
                        levels: levels.into_iter().collect(),
                    });
                }
                ColumnKind::Target => unreachable!("feature_columns excludes the target"),
            }
        }
        Ok(Encoder {
            schema: schema.clone(),
            layout,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for enc in &self.layout {
            match enc {
                ColumnEncoding::Numeric { name, .. } => names.push(name.clone()),
                ColumnEncoding::Categorical { name, levels } => {
                    names.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        names
    }

    fn encode_row(&self, row: &JoinedRow) -> Vec<f64> {
        let mut x = Vec::new();
        for (cell, enc) in row.cells.iter().zip(&self.layout) {
            match enc {
                ColumnEncoding::Numeric { params, .. } => {
                    let v = cell.as_number().unwrap_or(params.mean);
                    x.push((v - params.mean) / params.std);
                }
                ColumnEncoding::Categorical { levels, .. } => {
                    let start = x.len();
                    x.resize(start + levels.len(), 0.0);
                    if let Cell::Text(s) = cell {
                        if let Ok(k) = levels.binary_search(s) {
                            x[start + k] = 1.0;
                        }
                    }
                }
            }
        }
        x
    }

    /// Encode `rows` with the stored parameters. Sensitive thresholds are
    /// computed over exactly these rows.
    pub fn transform(&self, rows: &[JoinedRow]) -> EncodedDataset {
        let mut feature_kinds = Vec::new();
        let mut scaler_params = BTreeMap::new();
        let mut encoder_map = BTreeMap::new();
        for enc in &self.layout {
            match enc {
                ColumnEncoding::Numeric { name, params } => {
                    feature_kinds.push(FeatureKind::Numeric);
                    scaler_params.insert(name.clone(), *params);
                }
                ColumnEncoding::Categorical { name, levels } => {
                    let start = feature_kinds.len();
                    feature_kinds.extend(std::iter::repeat_n(FeatureKind::OneHot, levels.len()));
                    encoder_map.insert(
                        name.clone(),
                        levels.iter().enumerate().map(|(k, l)| (l.clone(), start + k)).collect(),
                    );
                }
            }
        }

        let cols: Vec<&ColumnSpec> = self.schema.feature_columns().collect();
        let sensitive_pos: Vec<usize> = (0..cols.len()).filter(|&j| cols[j].sensitive_class.is_some()).collect();
        let sensitive: Vec<SensitiveFeature> = sensitive_pos
            .iter()
            .map(|&j| SensitiveFeature {
                name: cols[j].name.clone(),
                class: cols[j].sensitive_class.expect("filtered on sensitive"),
            })
            .collect();

        let samples: Vec<Sample> = rows
            .iter()
            .map(|r| Sample {
                ward: r.ward.clone(),
                year: r.year,
                x: self.encode_row(r),
                y: r.target,
                sensitive: sensitive_pos
                    .iter()
                    .map(|&j| r.cells[j].as_number().unwrap_or(f64::NAN))
                    .collect(),
            })
            .collect();

        let mut thresholds = BTreeMap::new();
        for (k, feat) in sensitive.iter().enumerate() {
            let vals: Vec<f64> = samples.iter().map(|s| s.sensitive[k]).collect();
            if let Ok(t) = crate::fairness::threshold(&vals) {
                thresholds.insert(feat.name.clone(), t);
            }
        }

        EncodedDataset {
            samples,
            feature_names: self.feature_names(),
            feature_kinds,
            scaler_params,
            encoder_map,
            sensitive,
            thresholds,
        }
    }
}

/// Fit on `fit_on`, transform all `rows`.
pub fn encode(rows: &[JoinedRow], schema: &FeatureSchema, fit_on: &[usize]) -> Result<EncodedDataset> {
    Ok(Encoder::fit(rows, schema, fit_on)?.transform(rows))
}

/// Train/test split policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitSpec {
    Temporal {
        train_years: BTreeSet<i32>,
        test_years: BTreeSet<i32>,
    },
    Random {
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl SplitSpec {
    /// Train on 2016–2021, test on 2022.
    pub fn temporal_default() -> Self {
        SplitSpec::Temporal {
            train_years: (2016..=2021).collect(),
            test_years: [2022].into(),
        }
    }

    pub fn random(test_fraction: f64, seed: u64) -> Self {
        SplitSpec::Random { test_fraction, seed }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SplitSpec::Temporal { .. } => "temporal",
            SplitSpec::Random { .. } => "random",
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            SplitSpec::Random { test_fraction, .. } => SplitSpec::Random {
                test_fraction: *test_fraction,
                seed,
            },
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SplitSpec::Temporal {
                train_years,
                test_years,
            } => {
                if train_years.is_empty() || test_years.is_empty() {
                    return Err(Error::InvalidSplit("temporal year sets must be non-empty".into()));
                }
                if !train_years.is_disjoint(test_years) {
                    return Err(Error::InvalidSplit("train and test years overlap".into()));
                }
            }
            SplitSpec::Random { test_fraction, .. } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(Error::InvalidSplit(format!(
                        "test_fraction {test_fraction} is outside (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Partition sample indices given each sample's year.
    pub fn partition(&self, years: &[i32]) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let (train, test) = match self {
            SplitSpec::Temporal {
                train_years,
                test_years,
            } => {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (i, y) in years.iter().enumerate() {
                    if train_years.contains(y) {
                        train.push(i);
                    } else if test_years.contains(y) {
                        test.push(i);
                    } else {
                        return Err(Error::InvalidSplit(format!("year {y} is in neither year set")));
                    }
                }
                (train, test)
            }
            SplitSpec::Random { test_fraction, seed } => {
                let n = years.len();
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut seed::rng(*seed));
                // shave an ulp-scale epsilon so 0.2 * 10 is 2, not 3
                let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
                let cut = n - n_test.min(n);
                let test = order.split_off(cut);
                (order, test)
            }
        };
        if train.is_empty() {
            return Err(Error::EmptySide("train"));
        }
        if test.is_empty() {
            return Err(Error::EmptySide("test"));
        }
        Ok((train, test))
    }
}

pub fn split(data: &EncodedDataset, spec: &SplitSpec) -> Result<(EncodedDataset, EncodedDataset)> {
    let years: Vec<i32> = data.samples.iter().map(|s| s.year).collect();
    let (train, test) = spec.partition(&years)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Encode with scaler parameters fitted on the training side of `spec` only,
/// then split. Thresholds still cover all rows.
pub fn encode_and_split(
    rows: &[JoinedRow],
    schema: &FeatureSchema,
    spec: &SplitSpec,
) -> Result<(EncodedDataset, EncodedDataset)> {
    let years: Vec<i32> = rows.iter().map(|r| r.year).collect();
    let (train_idx, test_idx) = spec.partition(&years)?;
    let data = encode(rows, schema, &train_idx)?;
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

/// `(v - min) / (max - min)`.
pub fn min_max_scale(values: &[f64]) -> Result<Vec<f64>> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() < 2 || !(max > min) {
        return Err(Error::DegenerateRange);
    }
    let range = max - min;
    Ok(values.iter().map(|v| (v - min) / range).collect())
}
