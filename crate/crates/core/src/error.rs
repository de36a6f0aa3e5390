use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error(
        "dimension {dim} exceeds the dense oracle cap {cap}; use bound mode or a smaller instance"
    )]
    OracleCap { dim: usize, cap: usize },

    #[error("null spaces differ: {0}")]
    NullSpaceMismatch(String),

    #[error("Richardson iteration did not converge after {sweeps} sweeps (relative residual {residual:.3e}, target {target:.3e})")]
    NotConverged {
        sweeps: usize,
        residual: f64,
        target: f64,
        /// Per-node squared residual contributions, when available.
        per_node: Vec<f64>,
    },

    #[error("root finding failed on edge {edge}: {reason}")]
    RootFinding { edge: usize, reason: String },

    #[error("protocol error in round {round}: {reason}")]
    Protocol { round: usize, reason: String },

    #[error("deadlock in round {round}: node {node} is blocked in phase {phase}")]
    Deadlock {
        round: usize,
        node: usize,
        phase: String,
    },

    #[error("iteration diverged at k = {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("{method} failed at iteration {iteration}: {source}")]
    Method {
        method: String,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parameter(_)
            | Error::Structure(_)
            | Error::Disconnected { .. }
            | Error::OracleCap { .. }
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_) => true,
            Error::Method { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
