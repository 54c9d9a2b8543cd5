//! Synthetic ward-year tables with planted structure.
//!
//! Every ward gets persistent sensitive shares (Beta(2, 6), so the High
//! group is the minority), persistent socio-economic levels and an area
//! label; each year adds jitter. The target is linear in the numeric columns
//! plus whatever the config plants on top.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{join_and_clean, ColumnKind, ColumnSpec, FeatureSchema, JoinedRow, RawTable, SensitiveClass};
use crate::error::{Error, Result};
use crate::fairness::{self, Level};
use crate::seed;

const NUMERIC_NAMES: [&str; 8] = [
    "income",
    "employment",
    "pupils",
    "housing",
    "benefits",
    "density",
    "age",
    "claimants",
];
const AREAS: [&str; 4] = ["central", "east", "north", "south"];
const AREA_EFFECT: [f64; 4] = [0.0, 2.0, -1.0, 0.5];
const TARGET_BASE: f64 = 60.0;
/// Jitter on the yearly value of a sensitive share.
const SHARE_JITTER: f64 = 0.005;

/// Extra N(0, sigma) target noise on the High group of `feature`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNoise {
    pub feature: String,
    pub sigma: f64,
}

/// The High group of `feature` gets an extra `gamma * income` term, which a
/// model fitted mostly on the Low group under-learns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInteraction {
    pub feature: String,
    pub gamma: f64,
}

/// Adds `delta` to the first `columns` numeric columns from `from_year` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortShift {
    pub from_year: i32,
    pub delta: f64,
    pub columns: usize,
}

/// Noise that only shows up when `race` is split by `religion`: within the
/// High `race` group it sits entirely on the High `religion` rows, while the
/// Low `race` group gets it evenly. Both `race` groups end up with the same
/// expected absolute noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenDisparity {
    pub race: String,
    pub religion: String,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub wards: usize,
    /// Inclusive.
    pub years: (i32, i32),
    pub seed: u64,
    /// Non-sensitive numeric columns.
    pub numeric: usize,
    pub race: Vec<String>,
    pub religion: Vec<String>,
    /// Target noise shared by every row.
    pub noise: f64,
    /// Yearly jitter on the numeric columns.
    pub year_noise: f64,
    /// Target slope on the standardised sensitive shares.
    pub sensitive_effect: f64,
    pub group_noise: Vec<GroupNoise>,
    pub interaction: Option<GroupInteraction>,
    pub cohort_shift: Option<CohortShift>,
    pub hidden: Option<HiddenDisparity>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            wards: 34,
            years: (2016, 2022),
            seed: 0,
            numeric: 4,
            race: ["Chinese", "Indian", "Caribbean"].map(String::from).to_vec(),
            religion: ["Christian", "Buddhist", "Muslim"].map(String::from).to_vec(),
            noise: 1.0,
            year_noise: 0.3,
            sensitive_effect: 1.0,
            group_noise: Vec::new(),
            interaction: None,
            cohort_shift: None,
            hidden: None,
        }
    }
}

impl FixtureConfig {
    pub fn numeric_names(&self) -> Vec<String> {
        (0..self.numeric)
            .map(|j| NUMERIC_NAMES.get(j).map_or_else(|| format!("x{j}"), |s| s.to_string()))
            .collect()
    }

    fn sensitive_names(&self) -> impl Iterator<Item = &String> {
        self.race.iter().chain(&self.religion)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.wards < 2 {
            return bad(format!("need at least 2 wards, got {}", self.wards));
        }
        if self.years.1 <= self.years.0 {
            return bad(format!("need at least 2 years, got {:?}", self.years));
        }
        let mut names: Vec<&String> = self.sensitive_names().collect();
        let numeric = self.numeric_names();
        names.extend(&numeric);
        let unique: std::collections::BTreeSet<&String> = names.iter().copied().collect();
        if unique.len() != names.len() {
            return bad("column names must be unique".into());
        }
        for (what, v) in [("noise", self.noise), ("year_noise", self.year_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{what} must be a finite non-negative number"));
            }
        }
        let known = |f: &str| self.sensitive_names().any(|s| s == f);
        for g in &self.group_noise {
            if !known(&g.feature) || !(g.sigma >= 0.0) {
                return bad(format!("bad group noise on `{}`", g.feature));
            }
        }
        if let Some(i) = &self.interaction {
            if !known(&i.feature) || self.numeric == 0 {
                return bad(format!("bad interaction on `{}`", i.feature));
            }
        }
        if let Some(c) = &self.cohort_shift {
            if c.columns > self.numeric {
                return bad(format!("cannot shift {} of {} numeric columns", c.columns, self.numeric));
            }
        }
        if let Some(h) = &self.hidden {
            if !self.race.contains(&h.race) || !self.religion.contains(&h.religion) || !(h.sigma >= 0.0) {
                return bad("hidden disparity needs a race and a religion feature".into());
            }
        }
        Ok(())
    }
}

/// Generated tables as CSV text plus the schema describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub schema: FeatureSchema,
    /// `(table name, csv text)`
    pub tables: Vec<(String, String)>,
    /// Numeric columns carrying the cohort shift.
    pub shifted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub tables: Vec<PathBuf>,
    pub schema: PathBuf,
}

impl Fixture {
    pub fn raw_tables(&self) -> Result<Vec<RawTable>> {
        self.tables
            .iter()
            .map(|(name, text)| RawTable::from_reader(name, text.as_bytes(), &self.schema))
            .collect()
    }

    pub fn joined(&self) -> Result<Vec<JoinedRow>> {
        join_and_clean(&self.raw_tables()?, &self.schema)
    }

    /// Writes `<table>.csv` files and `schema.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<FixturePaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tables = Vec::new();
        for (name, text) in &self.tables {
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            tables.push(path);
        }
        let schema = dir.join("schema.json");
        std::fs::write(&schema, self.schema.to_json()?).map_err(|e| Error::io(&schema, e))?;
        Ok(FixturePaths { tables, schema })
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated non-negative")
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<fixture>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn generate_fixture(config: &FixtureConfig) -> Result<Fixture> {
    config.validate()?;
    let c = config;
    let years: Vec<i32> = (c.years.0..=c.years.1).collect();
    let sensitive: Vec<String> = c.sensitive_names().cloned().collect();
    let numeric = c.numeric_names();
    let coefs: Vec<f64> = (0..c.numeric).map(|j| [3.0, -2.0, 1.5, 1.0][j % 4] / (1 + j / 4) as f64).collect();

    // independent streams so toggling one planting leaves the rest intact
    let stream = |label: &str| seed::rng(seed::derive(c.seed, &["fixture", label]));
    let mut ward_rng = stream("wards");
    let share = Beta::new(2.0, 6.0).expect("valid beta");
    let std_normal = normal(1.0);
    let wards: Vec<(String, Vec<f64>, Vec<f64>, usize)> = (0..c.wards)
        .map(|w| {
            let shares = sensitive.iter().map(|_| share.sample(&mut ward_rng)).collect();
            let levels = numeric.iter().map(|_| std_normal.sample(&mut ward_rng)).collect();
            let area = ward_rng.random_range(0..AREAS.len());
            (format!("W{:03}", w + 1), shares, levels, area)
        })
        .collect();

    let mut year_rng = stream("years");
    let mut noise_rng = stream("noise");
    let jitter = normal(SHARE_JITTER);
    let year_noise = normal(c.year_noise);
    struct Row {
        ward: usize,
        year: i32,
        shares: Vec<f64>,
        x: Vec<f64>,
    }
    let mut rows = Vec::with_capacity(c.wards * years.len());
    for &year in &years {
        for (w, (_, shares, levels, _)) in wards.iter().enumerate() {
            let shares = shares.iter().map(|p| (p + jitter.sample(&mut year_rng)).clamp(0.0, 1.0)).collect();
            let x = levels
                .iter()
                .enumerate()
                .map(|(j, z)| {
                    let shift = match &c.cohort_shift {
                        Some(s) if j < s.columns && year >= s.from_year => s.delta,
                        _ => 0.0,
                    };
                    z + year_noise.sample(&mut year_rng) + shift
                })
                .collect();
            rows.push(Row { ward: w, year, shares, x });
        }
    }

    let column = |name: &str| sensitive.iter().position(|s| s == name).expect("validated feature");
    let levels_of = |name: &str| -> Result<Vec<Level>> {
        let idx = column(name);
        let values: Vec<f64> = rows.iter().map(|r| r.shares[idx]).collect();
        let t = fairness::threshold(&values)?;
        Ok(values.iter().map(|&v| Level::of(v, t)).collect())
    };

    let base_noise = normal(c.noise);
    let scale = (sensitive.len().max(1) as f64).sqrt();
    let mut target: Vec<f64> = rows
        .iter()
        .map(|r| {
            let linear: f64 = coefs.iter().zip(&r.x).map(|(b, x)| b * x).sum();
            let shares: f64 = r.shares.iter().map(|p| (p - 0.25) / 0.15).sum::<f64>() / scale;
            TARGET_BASE + linear + c.sensitive_effect * shares + AREA_EFFECT[wards[r.ward].3] + base_noise.sample(&mut noise_rng)
        })
        .collect();

    if let Some(i) = &c.interaction {
        for (k, level) in levels_of(&i.feature)?.into_iter().enumerate() {
            if level == Level::High {
                target[k] += i.gamma * rows[k].x[0];
            }
        }
    }
    for g in &c.group_noise {
        let extra = normal(g.sigma);
        for (k, level) in levels_of(&g.feature)?.into_iter().enumerate() {
            if level == Level::High {
                target[k] += extra.sample(&mut noise_rng);
            }
        }
    }
    if let Some(h) = &c.hidden {
        let a = levels_of(&h.race)?;
        let r = levels_of(&h.religion)?;
        let high_a = a.iter().filter(|l| **l == Level::High).count();
        let both = a.iter().zip(&r).filter(|(x, y)| **x == Level::High && **y == Level::High).count();
        // within High race the noise sits on High religion only, scaled so
        // the group's expected |noise| matches the Low race group
        let concentrated = if both > 0 {
            h.sigma * high_a as f64 / both as f64
        } else {
            0.0
        };
        let (low, high) = (normal(h.sigma), normal(concentrated));
        for k in 0..rows.len() {
            target[k] += match (a[k], r[k]) {
                (Level::Low, _) => low.sample(&mut noise_rng),
                (Level::High, Level::High) => high.sample(&mut noise_rng),
                (Level::High, Level::Low) => 0.0,
            };
        }
    }

    let key = |r: &Row| vec![wards[r.ward].0.clone(), r.year.to_string()];
    let head = |cols: &[String]| {
        let mut h = vec!["ward".to_string(), "year".to_string()];
        h.extend(cols.iter().cloned());
        h
    };
    let demographics: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = key(r);
            rec.extend(r.shares.iter().map(|v| v.to_string()));
            rec
        })
        .collect();
    let socio: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut rec = key(r);
            rec.extend(r.x.iter().map(|v| v.to_string()));
            rec.push(AREAS[wards[r.ward].3].to_string());
            rec
        })
        .collect();
    let crime: Vec<Vec<String>> = rows
        .iter()
        .zip(&target)
        .map(|(r, y)| {
            let mut rec = key(r);
            rec.push(y.max(0.0).to_string());
            rec
        })
        .collect();
    let mut socio_cols = numeric.clone();
    socio_cols.push("area".into());

    let mut columns: Vec<ColumnSpec> = Vec::new();
    for (names, class) in [(&c.race, SensitiveClass::Race), (&c.religion, SensitiveClass::Religion)] {
        columns.extend(names.iter().map(|n| ColumnSpec {
            name: n.clone(),
            kind: ColumnKind::Numeric,
            sensitive_class: Some(class),
        }));
    }
    columns.extend(numeric.iter().map(|n| ColumnSpec {
        name: n.clone(),
        kind: ColumnKind::Numeric,
        sensitive_class: None,
    }));
    columns.push(ColumnSpec {
        name: "area".into(),
        kind: ColumnKind::Categorical,
        sensitive_class: None,
    });
    columns.push(ColumnSpec {
        name: "crime_rate".into(),
        kind: ColumnKind::Target,
        sensitive_class: None,
    });

    Ok(Fixture {
        schema: FeatureSchema::new(columns, c.years)?,
        tables: vec![
            ("demographics".into(), to_csv(&head(&sensitive), &demographics)?),
            ("socioeconomic".into(), to_csv(&head(&socio_cols), &socio)?),
            ("crime".into(), to_csv(&head(&["crime_rate".to_string()]), &crime)?),
        ],
        shifted: c
            .cohort_shift
            .as_ref()
            .map_or_else(Vec::new, |s| numeric[..s.columns].to_vec()),
    })
}
