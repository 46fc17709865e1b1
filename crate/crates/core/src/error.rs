use crate::data::IdxError;
use crate::netdag::{Activation, NodeId, Violation};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network: {}", format_violations(.0))]
    InvalidNetwork(Vec<Violation>),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("covariance is not positive definite; use a nonzero ridge")]
    SingularCovariance,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("activation {0} has zero slope at the origin and cannot seed new neurons")]
    UnsupportedActivation(Activation),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("malformed document: {0}")]
    Document(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("csv: {0}")]
    Csv(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Document(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
