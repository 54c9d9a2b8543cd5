use std::path::PathBuf;

/// Errors produced anywhere in the audit pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column `{0}` is declared in the schema but absent from every input table")]
    MissingColumn(String),
    #[error("table `{table}` repeats the key ({ward}, {year})")]
    DuplicateKey {
        table: String,
        ward: String,
        year: i32,
    },
    #[error("table `{table}` row {row}: {reason}")]
    InvalidRow {
        table: String,
        row: usize,
        reason: String,
    },
    #[error("no rows survive the join and cleaning step")]
    EmptyJoin,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split leaves the {0} side empty")]
    EmptySide(&'static str),
    #[error("values span a degenerate range (all equal)")]
    DegenerateRange,
    #[error("feature values are all equal, no threshold can separate them")]
    DegenerateFeature,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite value in feature column {column} at row {row}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("target is constant, R² is undefined")]
    ConstantTarget,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("feature `{feature}` leaves the {side} group empty")]
    EmptyGroup { feature: String, side: &'static str },
    #[error("feature `{0}`: minority group has a single sample, MixUp needs two parents")]
    SingletonGroup(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("reports come from different model or test runs")]
    MismatchedProvenance,
    #[error("baseline disparity is zero, relative improvement is undefined")]
    ZeroBaseline,
    #[error("cell has no run results")]
    EmptyCell,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported model document version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
