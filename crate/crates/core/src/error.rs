use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Each variant maps to exactly one stable code (see [`Error::code`]) that the
/// service layer forwards to clients.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("project name must not be empty")]
    InvalidName,
    #[error("cannot parse data location {0:?}")]
    InvalidLocator(String),
    #[error("bias history is empty")]
    EmptyHistory,
    #[error("cannot insert outside current history range (step {insert_at}, latest {latest})")]
    OutOfRange { insert_at: i64, latest: usize },
    #[error("history index {0} is negative")]
    NegativeIndex(i64),
    #[error("{0} is not a sensitive feature of this project")]
    UnknownSensitiveFeature(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {0} has a single level")]
    ConstantColumn(String),
    #[error("contingency table for ({sensitive}, {candidate}) has an empty row or column")]
    DegenerateTable { sensitive: String, candidate: String },
    #[error("disparate impact denominator rate is zero")]
    DivisionByZero,
    #[error("group {0} has no rows")]
    EmptyGroup(String),
    #[error("current and prior data share no columns")]
    SchemaMismatch,
    #[error("no rows for sensitive level {level} with outcome {outcome}")]
    EmptyCell { level: String, outcome: bool },
    #[error("optimizer failed at every penalty weight")]
    NonConvergence,
    #[error("unknown mitigation strategy {0:?}")]
    UnknownStrategy(String),
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training loss increased across {0} consecutive accepted steps")]
    Divergence(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("column {column} is not binary")]
    NotBinary { column: String },
    #[error("project {0} already exists")]
    DuplicateId(String),
    #[error("project {0} not found")]
    NotFound(String),
    #[error("malformed HOG document: {0}")]
    MalformedHog(String),
    #[error("unknown stage {pipeline:?}/{stage:?}")]
    UnknownStage { pipeline: String, stage: String },
    #[error("project {0} already has an open gate")]
    AlreadyGated(String),
    #[error("project {0} is blocked at an open gate")]
    Gated(String),
    #[error("project {0} has no open gate")]
    NoOpenGate(String),
    #[error("decision {decision:?} is not one of {options:?}")]
    InvalidOption { decision: String, options: Vec<String> },
    #[error("risk-assessment decisions require a rationale")]
    MissingRationale,
    #[error("project {0} is not proceeding through SIFT")]
    NotProceeding(String),
    #[error("project {0} is not active")]
    NotActive(String),
    #[error("stage {stage} failed: {source}")]
    HandlerFailure {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("need {needed} rows of group {group}, only {available} available")]
    InsufficientRows { group: String, needed: usize, available: usize },
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid decision payload: {0}")]
    InvalidDecision(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidName => "InvalidName",
            Error::InvalidLocator(_) => "InvalidLocator",
            Error::EmptyHistory => "EmptyHistory",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::NegativeIndex(_) => "NegativeIndex",
            Error::UnknownSensitiveFeature(_) => "UnknownSensitiveFeature",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::ConstantColumn(_) => "ConstantColumn",
            Error::DegenerateTable { .. } => "DegenerateTable",
            Error::DivisionByZero => "DivisionByZero",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::SchemaMismatch => "SchemaMismatch",
            Error::EmptyCell { .. } => "EmptyCell",
            Error::NonConvergence => "NonConvergence",
            Error::UnknownStrategy(_) => "UnknownStrategy",
            Error::BadFraction(_) => "BadFraction",
            Error::NonFinite(_) => "NonFinite",
            Error::Divergence(_) => "Divergence",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::NotBinary { .. } => "NotBinary",
            Error::DuplicateId(_) => "DuplicateId",
            Error::NotFound(_) => "NotFound",
            Error::MalformedHog(_) => "MalformedHog",
            Error::UnknownStage { .. } => "UnknownStage",
            Error::AlreadyGated(_) => "AlreadyGated",
            Error::Gated(_) => "Gated",
            Error::NoOpenGate(_) => "NoOpenGate",
            Error::InvalidOption { .. } => "InvalidOption",
            Error::MissingRationale => "MissingRationale",
            Error::NotProceeding(_) => "NotProceeding",
            Error::NotActive(_) => "NotActive",
            Error::HandlerFailure { .. } => "HandlerFailure",
            Error::InsufficientRows { .. } => "InsufficientRows",
            Error::FileNotFound(_) => "FileNotFound",
            Error::SchemaError(_) => "SchemaError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidDecision(_) => "InvalidDecision",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Error {
        match self {
            e @ Error::HandlerFailure { .. } => e,
            e => Error::HandlerFailure { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}
