use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a trajectory stopped being regular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    /// A collision with |cos θ| below the tangency threshold.
    Tangential,
    /// A collision (or a gate/hole passage) within the edge threshold of a border.
    Edge,
    /// A post-collisional element with v·o exactly at the head-on cut ε.
    SectionBoundary,
}

impl std::fmt::Display for SingularKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SingularKind::Tangential => "tangential",
            SingularKind::Edge => "edge",
            SingularKind::SectionBoundary => "section_boundary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("root polish did not converge (|f| = {residual:e} after {iterations} iterations)")]
    NumericFailure { residual: f64, iterations: usize },

    #[error("point is within {distance:e} of a surface edge")]
    EdgeProximity { distance: f64 },

    #[error("no intersection within t = {horizon} from cell {cell}")]
    StuckTrajectory { cell: i64, horizon: f64 },

    #[error("singular orbit ({0})")]
    SingularOrbit(SingularKind),

    #[error("orbit did not leave the cell within {budget} collisions")]
    NotExited { budget: u64 },

    #[error("section map did not return within {budget} collisions")]
    NoReturn { budget: u64 },

    #[error("invalid section: {0}")]
    InvalidSection(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
