use std::path::PathBuf;

use thiserror::Error;

/// Failures of a single rate evaluation. These are kept `Clone` so they can
/// be stored per entry in a [`crate::operators::RateTable`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RateError {
    #[error("undefined rate: no individuals satisfy {condition}")]
    UndefinedRate { condition: String },
    #[error("standardization weight places mass on empty stratum {stratum}")]
    EmptyStratum { stratum: String },
    #[error("weight measure has zero mass on conditioning stratum {condition}")]
    ZeroWeightMass { condition: String },
    #[error("zero standardized rate: percent difference is undefined")]
    ZeroStandardizedRate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate stratum {0} in count table")]
    DuplicateStratum(String),
    #[error("stratum {stratum}: n_cases {cases} exceeds n_total {total}")]
    CasesExceedTotal { stratum: String, cases: u64, total: u64 },
    #[error("invalid weight measure: {0}")]
    Weight(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("count overflow while {0}")]
    Overflow(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
