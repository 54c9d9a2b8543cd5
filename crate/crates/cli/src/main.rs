//! `wardfair`: command-line front end for the audit engine.
//!
//! Exit codes: 0 on success, 1 when some experiment cells (or any other
//! step) failed, 2 when the configuration or arguments are invalid.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wardfair::dataset::write_joined_csv;
use wardfair::drift::{self, RbfKernel};
use wardfair::fairness;
use wardfair::harness::synth::{generate_fixture, FixtureConfig};
use wardfair::harness::{self, ExperimentConfig};
use wardfair::intersectional::{self, BlindSpotConfig, IntersectOptions};
use wardfair::mitigation::{self, MitigationMethod, MitigationSpec, DEFAULT_MIXUP_ALPHA, DEFAULT_PERTURB_SIGMA};
use wardfair::regressors::{self, ModelKind, ModelSpec, TrainedModel};
use wardfair::{encode, encode_and_split, join_and_clean, load_tables, EncodedDataset, FeatureSchema, JoinedRow, SensitiveClass, SplitSpec};

const DEFAULT_OUT: &str = "wardfair-out";

#[derive(Parser)]
#[command(name = "wardfair", version, about = "Fairness audit and bias mitigation for ward-level regression")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "WARDFAIR_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Join and clean the ward-year tables into one CSV.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train one model on one split and save it.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Single-feature ΔMAE audit of a trained model.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Model file from `train`; trains a fresh model when absent.
        #[arg(long)]
        load: Option<PathBuf>,
        /// Features to audit (comma separated); defaults to every sensitive column.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Apply a mitigation to the training set and compare ΔMAE.
    Mitigate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        feature: String,
        #[arg(long, default_value_t = DEFAULT_MIXUP_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_PERTURB_SIGMA)]
        sigma: f64,
    },
    /// Race × religion subgroup audit and blind-spot screen.
    Intersect {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, value_delimiter = ',')]
        race: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        religion: Vec<String>,
    },
    /// MMD and per-feature KS drift between two year cohorts.
    Drift {
        #[command(flatten)]
        data: DataArgs,
        /// Years of the first cohort, e.g. `2016` or `2016-2018`.
        #[arg(long, value_parser = parse_years)]
        cohort_a: BTreeSet<i32>,
        #[arg(long, value_parser = parse_years)]
        cohort_b: BTreeSet<i32>,
    },
    /// Run a full experiment grid from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; overrides the config.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write a synthetic fixture (tables and schema).
    Synth {
        #[arg(long, default_value_t = 34)]
        wards: usize,
        #[arg(long, value_parser = parse_years, default_value = "2016-2022")]
        years: BTreeSet<i32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON fixture options (planted noise, shifts); flags above override it.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Ward-year CSV tables.
    #[arg(required = true)]
    tables: Vec<PathBuf>,
    /// Schema JSON describing the columns.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// linear, decision_tree, random_forest, gradient_boosting or mlp.
    #[arg(long, default_value = "random_forest", value_parser = parse_model)]
    model: ModelKind,
    /// Hyperparameter override, `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, value_enum, default_value_t = SplitMode::Temporal)]
    split: SplitMode,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, value_parser = parse_years, default_value = "2016-2021")]
    train_years: BTreeSet<i32>,
    #[arg(long, value_parser = parse_years, default_value = "2022")]
    test_years: BTreeSet<i32>,
    /// Seeds the model and the random split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitMode {
    Temporal,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Oversample,
    Mixup,
    Perturb,
    Reweight,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: wardfair::Error| e.to_string())
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// `2016`, `2016-2018` or `2016,2019`.
fn parse_years(s: &str) -> Result<BTreeSet<i32>, String> {
    let mut years = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("bad year `{part}`");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                years.extend(a..=b);
            }
            None => {
                years.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    if years.is_empty() {
        return Err("no years given".into());
    }
    Ok(years)
}

impl ModelArgs {
    fn spec(&self, seed: u64) -> ModelSpec {
        self.params
            .iter()
            .fold(ModelSpec::new(self.model).with_seed(seed), |s, (k, v)| s.with_param(k, *v))
    }
}

impl SplitArgs {
    fn spec(&self) -> SplitSpec {
        match self.split {
            SplitMode::Temporal => SplitSpec::Temporal {
                train_years: self.train_years.clone(),
                test_years: self.test_years.clone(),
            },
            SplitMode::Random => SplitSpec::random(self.test_fraction, self.seed),
        }
    }
}

impl Method {
    fn resolve(self, alpha: f64, sigma: f64) -> MitigationMethod {
        match self {
            Method::Oversample => MitigationMethod::Oversample,
            Method::Mixup => MitigationMethod::Mixup { alpha },
            Method::Perturb => MitigationMethod::Perturb { sigma },
            Method::Reweight => MitigationMethod::Reweight,
        }
    }
}

fn load(data: &DataArgs) -> Result<(FeatureSchema, Vec<JoinedRow>)> {
    let schema = FeatureSchema::from_json_file(&data.schema)?;
    let tables = load_tables(&data.tables, &schema)?;
    let rows = join_and_clean(&tables, &schema)?;
    Ok((schema, rows))
}

fn load_split(data: &DataArgs, split: &SplitArgs) -> Result<(FeatureSchema, EncodedDataset, EncodedDataset)> {
    let (schema, rows) = load(data)?;
    let spec = split.spec();
    spec.validate()?;
    let (train, test) = encode_and_split(&rows, &schema, &spec)?;
    Ok((schema, train, test))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sensitive_or_all(requested: Vec<String>, schema: &FeatureSchema, class: Option<SensitiveClass>) -> Vec<String> {
    if !requested.is_empty() {
        return requested;
    }
    match class {
        Some(c) => schema.sensitive_of(c),
        None => schema.sensitive().map(|c| c.name.clone()).collect(),
    }
}

enum Status {
    Done,
    Partial,
}

fn dispatch(cli: Cli) -> Result<Status> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match cli.command {
        Command::Ingest { data } => {
            let (schema, rows) = load(&data)?;
            write_joined_csv(&rows, &schema, create(&out, "joined.csv")?)?;
            println!("{} ward-year rows -> {}", rows.len(), out.join("joined.csv").display());
        }
        Command::Train { data, model, split } => {
            let (_, train, test) = load_split(&data, &split)?;
            let trained = regressors::train(&model.spec(split.seed), &train, None)?;
            let (mae, r2) = regressors::evaluate(&trained, &test)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("model.json");
            trained.save(&path)?;
            println!("{} on {} train / {} test rows: MAE {mae:.4}, R² {r2:.4}", model.model, train.len(), test.len());
            println!("saved {}", path.display());
        }
        Command::Audit {
            data,
            model,
            split,
            load: saved,
            features,
        } => {
            let (schema, train, test) = load_split(&data, &split)?;
            let trained = match saved {
                Some(path) => TrainedModel::load(path)?,
                None => regressors::train(&model.spec(split.seed), &train, None)?,
            };
            let features = sensitive_or_all(features, &schema, None);
            let report = fairness::single_feature_audit(&trained, &test, &features)?;
            report.write_csv(create(&out, "audit.csv")?)?;
            let md = report.to_markdown();
            write(&out, "audit.md", &md)?;
            print!("{md}");
            if !report.skipped.is_empty() {
                return Ok(Status::Partial);
            }
        }
        Command::Mitigate {
            data,
            model,
            split,
            method,
            feature,
            alpha,
            sigma,
        } => {
            let (_, train, test) = load_split(&data, &split)?;
            let method = method.resolve(alpha, sigma);
            method.validate()?;
            let spec = model.spec(split.seed);
            let aug = mitigation::apply(
                &MitigationSpec {
                    method,
                    feature: feature.clone(),
                    seed: split.seed,
                },
                &train,
            )?;
            aug.write_csv(create(&out, "augmented.csv")?)?;
            let groups = fairness::assign_stored(&test, &feature)?;
            let before = fairness::delta_mae(&regressors::train(&spec, &train, None)?, &test, &groups)?;
            let after = fairness::delta_mae(&regressors::train(&spec, &aug.data, aug.weights.as_ref())?, &test, &groups)?;
            println!(
                "{} on `{feature}`: {} -> {} training rows, ΔMAE {:.4} -> {:.4}",
                method.name(),
                train.len(),
                aug.data.len(),
                before.delta_mae,
                after.delta_mae
            );
            match harness::is_effective(before.delta_mae, after.delta_mae) {
                Ok(true) => println!("effective (more than 25% reduction)"),
                Ok(false) => println!("not effective"),
                Err(e) => println!("effectiveness undefined: {e}"),
            }
        }
        Command::Intersect {
            data,
            model,
            split,
            race,
            religion,
        } => {
            let (schema, train, test) = load_split(&data, &split)?;
            let race = sensitive_or_all(race, &schema, Some(SensitiveClass::Race));
            let religion = sensitive_or_all(religion, &schema, Some(SensitiveClass::Religion));
            let trained = regressors::train(&model.spec(split.seed), &train, None)?;
            let pred = trained.predict_dataset(&test)?;
            let inter = intersectional::intersect_predictions(&test, &pred, &race, &religion, IntersectOptions::default())?;
            let single = fairness::audit_predictions(&test, &pred, &race)?;
            let spots = intersectional::blind_spot_screen(&single, &inter, BlindSpotConfig::default())?;
            inter.write_csv(create(&out, "intersectional.csv")?)?;
            let md = inter.to_markdown();
            write(&out, "table4.md", &md)?;
            write(&out, "blind_spots.json", &serde_json::to_string_pretty(&spots)?)?;
            print!("{md}");
            for s in &spots {
                println!("blind spot: {} (single ΔMAE {:.2})", s.feature, s.single_delta);
            }
        }
        Command::Drift { data, cohort_a, cohort_b } => {
            let (schema, rows) = load(&data)?;
            let all: Vec<usize> = (0..rows.len()).collect();
            let encoded = encode(&rows, &schema, &all)?;
            let report = drift::drift_report(&encoded, &cohort_a, &cohort_b, RbfKernel::default())?;
            write(&out, "drift.json", &report.to_json()?)?;
            let projection = drift::project_2d(&encoded.rows())?;
            drift::write_projection_csv(&encoded, &projection, create(&out, "projection.csv")?)?;
            println!(
                "MMD {:.4} (σ {:.4}); {} of {} features shifted (p < 0.05)",
                report.mmd,
                report.kernel.sigma,
                report.significant,
                report.per_feature.len()
            );
        }
        Command::Run { config, jobs } => {
            let mut config = ExperimentConfig::from_json_file(&config)?;
            if let Some(dir) = cli.out {
                config.output_dir = dir;
            }
            if jobs.is_some() {
                config.jobs = jobs;
            }
            config.validate()?;
            let outcome = harness::run_experiment(&config)?;
            println!(
                "{} cells, {} runs -> {}",
                outcome.manifest.cells.len(),
                outcome.runs.len(),
                config.output_dir.display()
            );
            if outcome.has_failures() {
                eprintln!(
                    "{} cells and {} analyses failed; see manifest.json",
                    outcome.manifest.failed_cells(),
                    outcome.manifest.failed_analyses()
                );
                return Ok(Status::Partial);
            }
        }
        Command::Synth {
            wards,
            years,
            seed,
            fixture,
        } => {
            let mut config = match fixture {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).map_err(|e| wardfair::Error::InvalidConfig(e.to_string()))?
                }
                None => FixtureConfig::default(),
            };
            let (first, last) = (*years.first().unwrap(), *years.last().unwrap());
            if years.len() as i64 != i64::from(last) - i64::from(first) + 1 {
                bail!(wardfair::Error::InvalidConfig("synthetic years must be contiguous".into()));
            }
            config.wards = wards;
            config.years = (first, last);
            config.seed = seed;
            config.validate()?;
            let paths = generate_fixture(&config)?.write_to(&out)?;
            for t in &paths.tables {
                println!("{}", t.display());
            }
            println!("{}", paths.schema.display());
        }
    }
    Ok(Status::Done)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use wardfair::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::InvalidConfig(_) | E::InvalidSchema(_) | E::InvalidSplit(_) | E::InvalidRequest(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
