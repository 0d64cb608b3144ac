use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: unknown ability `{name}`")]
    UnknownAbility { line: usize, name: String },

    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("ability `{ability}` has {available} train instances, {requested} requested")]
    InsufficientTrain {
        ability: String,
        requested: usize,
        available: usize,
    },

    #[error("fixture has no record for ({instance_id}, {candidate_id})")]
    MissingFixtureKey {
        instance_id: String,
        candidate_id: String,
    },

    #[error("fixture has no generation for `{0}`")]
    MissingGeneration(String),

    #[error("provider: {0}")]
    Provider(String),

    #[error("malformed provider response: {0}")]
    MalformedResponse(String),

    #[error("positive log-probability {value} for ({instance_id}, {candidate_id})")]
    PositiveLogProb {
        instance_id: String,
        candidate_id: String,
        value: f64,
    },

    #[error("instance `{instance_id}` failed: {source}")]
    InstanceFailed {
        instance_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no checkpoint after epoch {0}")]
    NoEligibleEpoch(u32),

    #[error("accuracy matrix is missing cell (trained on `{trained}`, evaluated on `{evaluated}`)")]
    MissingCell { trained: String, evaluated: String },

    #[error("{what} = {value} is out of range")]
    OutOfRange { what: String, value: f64 },

    #[error("need at least 2 distinct scales, got {0}")]
    TooFewScales(usize),

    #[error("all sensitivities are equal; min-max range is degenerate")]
    DegenerateRange,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("feature values are constant; correlation is undefined")]
    ConstantFeature,

    #[error("sensitivity values are constant; correlation is undefined")]
    ConstantSensitivity,

    #[error("budget {budget} is below the {required} reserved by floors and caps")]
    InfeasibleBudget { budget: u64, required: u64 },

    #[error("no responsive ability to receive the residual budget")]
    NoResponsive,

    #[error("`{ability}` needs {count} instances but only {available} are available")]
    AvailabilityExceeded {
        ability: String,
        count: u64,
        available: u64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the environment (files, network, model endpoint)
    /// rather than of the data being validated.
    pub fn is_io_or_provider(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Provider(_)
            | Error::MalformedResponse(_)
            | Error::PositiveLogProb { .. }
            | Error::MissingFixtureKey { .. }
            | Error::MissingGeneration(_) => true,
            Error::InstanceFailed { source, .. } => source.is_io_or_provider(),
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}
