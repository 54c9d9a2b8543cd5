//! Experiment orchestration: the seeded (model, split, feature, mitigation)
//! grid, its summaries and the files written from them.
//!
//! Every run of every cell draws its seeds from the master seed and the
//! cell's labels, so cells are independent and the output does not depend on
//! how the work is scheduled. Random splits are reshuffled per run from
//! `(master, split, run)` only, so the baseline and every mitigation of a
//! run share one test set.

pub mod config;
pub mod plot;
pub mod stats;
pub mod synth;
mod tables;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AnalysisTarget, DataSource, DriftConfig, ExperimentConfig, PlotConfig, SensitiveFeatures};
pub use plot::{ols_fit, scatter_regression_plot, trend_plot, RegressionFit, ScatterPlot, TrendPlot};
pub use stats::{effectiveness_mark, is_effective, summarize, CellKey, CellSummary, MeanStd, RunResult, BASELINE};
pub use synth::{generate_fixture, Fixture, FixtureConfig};

use crate::dataset::{self, ColumnKind, EncodedDataset, FeatureSchema, JoinedRow, SplitSpec};
use crate::drift::{self, DriftReport, RbfKernel};
use crate::error::{Error, Result};
use crate::fairness::{self, AblationRecord, AblationReport};
use crate::intersectional::{self, BlindSpot, BlindSpotConfig, IntersectOptions, IntersectionReport};
use crate::mitigation::{self, MitigationMethod, MitigationSpec};
use crate::regressors::{self, ModelKind, ModelSpec};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub key: CellKey,
    #[serde(flatten)]
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub name: String,
    #[serde(flatten)]
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub runs: usize,
    pub cells: Vec<ManifestEntry>,
    pub analyses: Vec<AnalysisEntry>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn failed_cells(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Failed { .. }))
            .count()
    }

    pub fn failed_analyses(&self) -> usize {
        self.analyses
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Failed { .. }))
            .count()
    }
}

/// A file the experiment produces, kept in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<CellSummary>,
    pub manifest: Manifest,
    pub ablation: Option<AblationReport>,
    pub intersection: Option<IntersectionReport>,
    pub blind_spots: Vec<BlindSpot>,
    pub drift: Option<DriftReport>,
    pub artifacts: Vec<Artifact>,
}

impl ExperimentOutcome {
    pub fn has_failures(&self) -> bool {
        self.manifest.failed_cells() + self.manifest.failed_analyses() > 0
    }

    pub fn summary(&self, key: &CellKey) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| &s.key == key)
    }

    /// Write every artifact into `dir`, creating it if needed.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.artifacts
            .iter()
            .map(|a| {
                let path = dir.join(&a.name);
                std::fs::write(&path, &a.contents).map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect()
    }
}

/// Load, clean and join the configured tables.
pub fn load_rows(config: &ExperimentConfig) -> Result<(FeatureSchema, Vec<JoinedRow>)> {
    match &config.data {
        DataSource::Files { tables, schema } => {
            let schema = FeatureSchema::from_json_file(schema)?;
            let raw = dataset::load_tables(tables, &schema)?;
            let rows = dataset::join_and_clean(&raw, &schema)?;
            Ok((schema, rows))
        }
        DataSource::Synthetic(f) => {
            let fixture = synth::generate_fixture(f)?;
            let rows = fixture.joined()?;
            Ok((fixture.schema, rows))
        }
    }
}

fn resolve_features(config: &ExperimentConfig, schema: &FeatureSchema) -> Result<SensitiveFeatures> {
    let features = if config.sensitive_features.is_empty() {
        SensitiveFeatures::from_schema(schema)
    } else {
        config.sensitive_features.clone()
    };
    for f in features.all() {
        match schema.column(&f) {
            Some(c) if c.sensitive_class.is_some() && c.kind == ColumnKind::Numeric => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "`{f}` is not a numeric sensitive column of the schema"
                )))
            }
        }
    }
    Ok(features)
}

type SplitData = std::result::Result<Arc<(EncodedDataset, EncodedDataset)>, String>;

struct Context<'a> {
    config: &'a ExperimentConfig,
    split_names: Vec<String>,
    /// `[split][run]`
    splits: Vec<Vec<SplitData>>,
}

impl Context<'_> {
    fn split(&self, split: usize, run: usize) -> std::result::Result<&(EncodedDataset, EncodedDataset), String> {
        self.splits[split][run].as_ref().map(|a| a.as_ref()).map_err(Clone::clone)
    }
}

fn prepare_splits(config: &ExperimentConfig, names: &[String], rows: &[JoinedRow], schema: &FeatureSchema) -> Vec<Vec<SplitData>> {
    config
        .splits
        .iter()
        .zip(names)
        .map(|(spec, name)| {
            let make = |spec: &SplitSpec| -> SplitData {
                dataset::encode_and_split(rows, schema, spec)
                    .map(Arc::new)
                    .map_err(|e| format!("split `{name}`: {e}"))
            };
            match spec {
                SplitSpec::Temporal { .. } => {
                    let once = make(spec);
                    vec![once; config.runs]
                }
                SplitSpec::Random { .. } => (0..config.runs)
                    .into_par_iter()
                    .map(|run| make(&spec.with_seed(seed::derive(config.master_seed, &["split", name, &run.to_string()]))))
                    .collect(),
            }
        })
        .collect()
}

struct CellPlan<'a> {
    key: CellKey,
    model: &'a ModelSpec,
    split: usize,
    method: Option<MitigationMethod>,
}

/// Seed of one run of one cell.
pub fn run_seed(master: u64, key: &CellKey, run: usize) -> u64 {
    seed::derive(
        master,
        &[key.model.name(), &key.split, &key.feature, &key.mitigation, &run.to_string()],
    )
}

fn run_once(ctx: &Context, cell: &CellPlan, run: usize) -> Result<RunResult> {
    let (train, test) = ctx.split(cell.split, run).map_err(Error::InvalidRequest)?;
    let cell_seed = run_seed(ctx.config.master_seed, &cell.key, run);
    let spec = cell.model.clone().with_seed(seed::child(cell_seed, 0));
    let model = match cell.method {
        None => regressors::train(&spec, train, None)?,
        Some(method) => {
            let augmented = mitigation::apply(
                &MitigationSpec {
                    method,
                    feature: cell.key.feature.clone(),
                    seed: seed::child(cell_seed, 1),
                },
                train,
            )?;
            regressors::train(&spec, &augmented.data, augmented.weights.as_ref())?
        }
    };
    let pred = model.predict_dataset(test)?;
    let y = test.targets();
    let groups = fairness::assign_stored(test, &cell.key.feature)?;
    Ok(RunResult {
        key: cell.key.clone(),
        run,
        seed: cell_seed,
        mae: regressors::mae(&y, &pred)?,
        r2: regressors::r2(&y, &pred)?,
        disparity: fairness::disparity_from_predictions(&y, &pred, &groups)?,
    })
}

fn run_cell(ctx: &Context, cell: &CellPlan) -> std::result::Result<Vec<RunResult>, String> {
    (0..ctx.config.runs)
        .map(|run| run_once(ctx, cell, run).map_err(|e| format!("run {run}: {e}")))
        .collect()
}

fn analysis_split<'a>(ctx: &'a Context, target: &AnalysisTarget, run: usize) -> Result<(&'a ModelSpec, &'a (EncodedDataset, EncodedDataset))> {
    let model = ctx
        .config
        .models
        .iter()
        .find(|m| m.kind == target.model)
        .ok_or_else(|| Error::InvalidConfig(format!("model `{}` is not in the grid", target.model)))?;
    let split = ctx
        .split_names
        .iter()
        .position(|s| s == &target.split)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown split `{}`", target.split)))?;
    Ok((model, ctx.split(split, run).map_err(Error::InvalidRequest)?))
}

/// Ablation on every run, averaged per feature.
fn run_ablation(ctx: &Context, target: &AnalysisTarget, features: &[String]) -> Result<AblationReport> {
    let reports: Vec<AblationReport> = (0..ctx.config.runs)
        .into_par_iter()
        .map(|run| {
            let (model, (train, test)) = analysis_split(ctx, target, run)?;
            let s = seed::derive(ctx.config.master_seed, &["ablation", target.model.name(), &target.split, &run.to_string()]);
            fairness::ablation_audit(&model.clone().with_seed(s), train, test, features)
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for r in &reports[0].records {
        let matching: Vec<&AblationRecord> = reports
            .iter()
            .filter_map(|rep| rep.records.iter().find(|o| o.feature == r.feature))
            .collect();
        let n = matching.len() as f64;
        let with = matching.iter().map(|m| m.delta_with).sum::<f64>() / n;
        let without = matching.iter().map(|m| m.delta_without).sum::<f64>() / n;
        records.push(AblationRecord {
            feature: r.feature.clone(),
            delta_with: with,
            delta_without: without,
            abs_diff: (with - without).abs(),
        });
    }
    Ok(AblationReport {
        records,
        skipped: reports[0].skipped.clone(),
    })
}

fn run_intersectional(
    ctx: &Context,
    target: &AnalysisTarget,
    features: &SensitiveFeatures,
) -> Result<(IntersectionReport, Vec<BlindSpot>)> {
    let (model, (train, test)) = analysis_split(ctx, target, 0)?;
    let s = seed::derive(ctx.config.master_seed, &["intersectional", target.model.name(), &target.split]);
    let trained = regressors::train(&model.clone().with_seed(s), train, None)?;
    let pred = trained.predict_dataset(test)?;
    let single = fairness::audit_predictions(test, &pred, &features.all())?;
    let inter = intersectional::intersect_predictions(
        test,
        &pred,
        &features.race,
        &features.religion,
        IntersectOptions::default(),
    )?;
    let blind = intersectional::blind_spot_screen(&single, &inter, BlindSpotConfig::default())?;
    Ok((inter, blind))
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv writer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn runs_csv(runs: &[RunResult]) -> Result<String> {
    csv_text(
        &[
            "model", "split", "feature", "mitigation", "run", "seed", "mae", "r2", "n_low", "n_high", "mae_low",
            "mae_high", "delta_mae",
        ],
        runs.iter().map(|r| {
            let d = &r.disparity;
            vec![
                r.key.model.name().to_string(),
                r.key.split.clone(),
                r.key.feature.clone(),
                r.key.mitigation.clone(),
                r.run.to_string(),
                r.seed.to_string(),
                r.mae.to_string(),
                r.r2.to_string(),
                d.n_low.to_string(),
                d.n_high.to_string(),
                d.mae_low.to_string(),
                d.mae_high.to_string(),
                d.delta_mae.to_string(),
            ]
        }),
    )
}

fn summary_csv(summaries: &[CellSummary]) -> Result<String> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    csv_text(
        &[
            "model", "split", "feature", "mitigation", "runs", "mae_mean", "mae_std", "r2_mean", "r2_std",
            "delta_mae_mean", "delta_mae_std", "improvement", "effective", "flag",
        ],
        summaries.iter().map(|s| {
            vec![
                s.key.model.name().to_string(),
                s.key.split.clone(),
                s.key.feature.clone(),
                s.key.mitigation.clone(),
                s.runs.to_string(),
                s.mae.mean.to_string(),
                s.mae.std.to_string(),
                s.r2.mean.to_string(),
                s.r2.std.to_string(),
                s.delta_mae.mean.to_string(),
                s.delta_mae.std.to_string(),
                opt(s.improvement),
                s.effective.to_string(),
                s.flag.clone().unwrap_or_default(),
            ]
        }),
    )
}

fn plots(
    config: &PlotConfig,
    schema: &FeatureSchema,
    rows: &[JoinedRow],
    features: &[String],
    artifacts: &mut Vec<Artifact>,
    analyses: &mut Vec<AnalysisEntry>,
) {
    let mut record = |name: String, outcome: Result<Vec<Artifact>>| match outcome {
        Ok(mut a) => {
            artifacts.append(&mut a);
            analyses.push(AnalysisEntry {
                name,
                status: CellStatus::Completed,
            });
        }
        Err(e) => analyses.push(AnalysisEntry {
            name,
            status: CellStatus::Failed { reason: e.to_string() },
        }),
    };
    let trend_columns = if config.trend_columns.is_empty() {
        vec![schema.target.clone()]
    } else {
        config.trend_columns.clone()
    };
    for column in &trend_columns {
        let outcome = plot::trend_plot(rows, schema, column).map(|p| {
            vec![Artifact {
                name: format!("trend_{}.svg", slug(column)),
                contents: p.to_svg(),
            }]
        });
        record(format!("trend:{column}"), outcome);
    }
    if config.scatter {
        let y: Vec<f64> = rows.iter().map(|r| r.target).collect();
        let mut fits = Vec::new();
        for f in features {
            let x: Vec<f64> = rows.iter().map(|r| r.number(schema, f).unwrap_or(f64::NAN)).collect();
            let outcome = plot::scatter_regression_plot(&x, &y, f, &schema.target).map(|p| {
                fits.push((f.clone(), p.fit));
                vec![Artifact {
                    name: format!("scatter_{}.svg", slug(f)),
                    contents: p.svg,
                }]
            });
            record(format!("scatter:{f}"), outcome);
        }
        let table = csv_text(
            &["feature", "n", "slope", "intercept", "slope_se", "p_value", "r_squared"],
            fits.iter().map(|(f, fit)| {
                vec![
                    f.clone(),
                    fit.n.to_string(),
                    fit.slope.to_string(),
                    fit.intercept.to_string(),
                    fit.slope_se.to_string(),
                    fit.p_value.to_string(),
                    fit.r_squared.to_string(),
                ]
            }),
        );
        record(
            "scatter:table".into(),
            table.map(|contents| {
                vec![Artifact {
                    name: "scatter_fits.csv".into(),
                    contents,
                }]
            }),
        );
    }
}

/// Run the whole grid and the configured side analyses in memory.
///
/// Data and configuration problems are returned as errors; anything that
/// goes wrong inside a cell or analysis is recorded in the manifest instead.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (schema, rows) = load_rows(config)?;
    let features = resolve_features(config, &schema)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = config.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| Error::InvalidConfig(e.to_string()))?
    };
    pool.install(|| execute_in_pool(config, &schema, &rows, &features))
}

fn execute_in_pool(
    config: &ExperimentConfig,
    schema: &FeatureSchema,
    rows: &[JoinedRow],
    features: &SensitiveFeatures,
) -> Result<ExperimentOutcome> {
    let split_names = config.split_names();
    let ctx = Context {
        config,
        splits: prepare_splits(config, &split_names, rows, schema),
        split_names,
    };
    let all_features = features.all();

    let methods: Vec<Option<MitigationMethod>> =
        std::iter::once(None).chain(config.mitigations.iter().copied().map(Some)).collect();
    let mut plan = Vec::new();
    for model in &config.models {
        for (split, split_name) in ctx.split_names.iter().enumerate() {
            for feature in &all_features {
                for method in &methods {
                    plan.push(CellPlan {
                        key: CellKey {
                            model: model.kind,
                            split: split_name.clone(),
                            feature: feature.clone(),
                            mitigation: method.map_or(BASELINE, |m| m.name()).to_string(),
                        },
                        model,
                        split,
                        method: *method,
                    });
                }
            }
        }
    }
    let outcomes: Vec<std::result::Result<Vec<RunResult>, String>> =
        plan.par_iter().map(|cell| run_cell(&ctx, cell)).collect();

    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    let mut cells = Vec::new();
    for (cell, outcome) in plan.iter().zip(outcomes) {
        let status = match outcome.and_then(|r| summarize(&r).map(|s| (r, s)).map_err(|e| e.to_string())) {
            Ok((mut r, s)) => {
                runs.append(&mut r);
                summaries.push(s);
                CellStatus::Completed
            }
            Err(reason) => CellStatus::Failed { reason },
        };
        cells.push(ManifestEntry {
            key: cell.key.clone(),
            status,
        });
    }
    stats::mark_all(&mut summaries);

    let mut perf: BTreeMap<(ModelKind, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.key.is_baseline()) {
        let e = perf.entry((r.key.model, r.key.split.clone())).or_default();
        e.0.push(r.mae);
        e.1.push(r.r2);
    }
    let perf: BTreeMap<(ModelKind, String), (MeanStd, MeanStd)> = perf
        .into_iter()
        .map(|(k, (mae, r2))| Ok((k, (MeanStd::of(&mae)?, MeanStd::of(&r2)?))))
        .collect::<Result<_>>()?;

    let models: Vec<ModelKind> = config.models.iter().map(|m| m.kind).collect();
    let mitigation_labels: Vec<(String, String)> = config
        .mitigations
        .iter()
        .map(|m| (m.name().to_string(), m.label().to_string()))
        .collect();
    let mut artifacts = vec![
        Artifact {
            name: "runs.csv".into(),
            contents: runs_csv(&runs)?,
        },
        Artifact {
            name: "summary.csv".into(),
            contents: summary_csv(&summaries)?,
        },
        Artifact {
            name: "table1.md".into(),
            contents: tables::model_table(&models, &ctx.split_names, &perf),
        },
        Artifact {
            name: "table2.md".into(),
            contents: tables::mitigation_table(&summaries, &all_features, &models, &ctx.split_names, &mitigation_labels),
        },
    ];

    let mut analyses = Vec::new();
    let mut note = |name: &str, r: &Result<()>| {
        analyses.push(AnalysisEntry {
            name: name.to_string(),
            status: match r {
                Ok(()) => CellStatus::Completed,
                Err(e) => CellStatus::Failed { reason: e.to_string() },
            },
        })
    };

    let mut ablation = None;
    if let Some(target) = &config.ablation {
        let r = run_ablation(&ctx, target, &all_features).map(|rep| {
            artifacts.push(Artifact {
                name: "table3.md".into(),
                contents: rep.to_markdown(),
            });
            ablation = Some(rep);
        });
        note("ablation", &r);
    }

    let mut intersection = None;
    let mut blind_spots = Vec::new();
    if let Some(target) = &config.intersectional {
        let r = run_intersectional(&ctx, target, features).and_then(|(rep, blind)| {
            let mut csv = Vec::new();
            rep.write_csv(&mut csv)?;
            artifacts.push(Artifact {
                name: "table4.md".into(),
                contents: rep.to_markdown(),
            });
            artifacts.push(Artifact {
                name: "intersectional.csv".into(),
                contents: String::from_utf8(csv).expect("csv output is utf-8"),
            });
            artifacts.push(Artifact {
                name: "blind_spots.json".into(),
                contents: serde_json::to_string_pretty(&blind)?,
            });
            intersection = Some(rep);
            blind_spots = blind;
            Ok(())
        });
        note("intersectional", &r);
    }

    let mut drift_report = None;
    if let Some(d) = &config.drift {
        let r = (|| -> Result<()> {
            let all: Vec<usize> = (0..rows.len()).collect();
            let data = dataset::encode(rows, schema, &all)?;
            let report = drift::drift_report(&data, &d.cohort_a, &d.cohort_b, RbfKernel::default())?;
            let projection = drift::project_2d(&data.rows())?;
            let mut csv = Vec::new();
            drift::write_projection_csv(&data, &projection, &mut csv)?;
            artifacts.push(Artifact {
                name: "drift.json".into(),
                contents: report.to_json()?,
            });
            artifacts.push(Artifact {
                name: "projection.csv".into(),
                contents: String::from_utf8(csv).expect("csv output is utf-8"),
            });
            drift_report = Some(report);
            Ok(())
        })();
        note("drift", &r);
    }

    let plot_config = config.plots.clone().unwrap_or_default();
    plots(&plot_config, schema, rows, &all_features, &mut artifacts, &mut analyses);

    let mut manifest = Manifest {
        master_seed: config.master_seed,
        runs: config.runs,
        cells,
        analyses,
        artifacts: artifacts.iter().map(|a| a.name.clone()).collect(),
    };
    manifest.artifacts.push("manifest.json".into());
    artifacts.push(Artifact {
        name: "manifest.json".into(),
        contents: serde_json::to_string_pretty(&manifest)?,
    });

    Ok(ExperimentOutcome {
        runs,
        summaries,
        manifest,
        ablation,
        intersection,
        blind_spots,
        drift: drift_report,
        artifacts,
    })
}

/// [`execute`] and write the artifacts into the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let outcome = execute(config)?;
    outcome.write_to(&config.output_dir)?;
    Ok(outcome)
}
