use thiserror::Error;

/// Errors raised across the library. Agent and node indices are zero-based.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (size {len})")]
    Index { index: usize, len: usize },

    #[error("directed cycle detected: {cycle:?}")]
    Cycle { cycle: Vec<usize> },

    #[error("weight matrix is not symmetric (max asymmetry {asymmetry:e})")]
    Symmetry { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pair (A_ii, C_ii) is not observable for agent index {agent}")]
    Unobservable { agent: usize },

    #[error("pair (A, C) is not observable")]
    UnobservablePair,

    #[error("connectivity requirement failed: {0}")]
    Connectivity(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("agents {unreachable:?} cannot be assigned a layer (not connected to any anchor)")]
    Layer { unreachable: Vec<usize> },

    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
