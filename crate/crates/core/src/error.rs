use thiserror::Error;

/// Errors raised anywhere in the identification/control pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqrError {
    /// A field of the problem description is malformed. The first member names the field.
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("{what} is not on the time grid (t = {t})")]
    OffGrid { what: &'static str, t: f64 },

    /// The simulated state became non-finite.
    #[error("plant diverged at t = {t}")]
    PlantDivergence { t: f64 },

    /// ‖P‖ exceeded the escape threshold while integrating backward.
    #[error("Riccati solution escaped at t = {t} (norm {norm:e})")]
    RiccatiBlowUp { t: f64, norm: f64 },

    /// Wraps a numerical failure with the round during which it happened.
    #[error("round {round}: {source}")]
    InRound {
        round: usize,
        #[source]
        source: Box<LqrError>,
    },

    #[error("control changed inside a constant-control block at node {node}")]
    ControlNotHeld { node: usize },

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    #[error("matrix {what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("unsupported scheme order {0}; expected 1, 2 or 4")]
    UnsupportedOrder(usize),

    #[error("convergence order needs positive errors and distinct steps")]
    BadConvergenceInput,
}

impl LqrError {
    pub(crate) fn field(field: &'static str, reason: impl Into<String>) -> Self {
        LqrError::InvalidField {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        LqrError::DimensionMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ LqrError::InRound { .. } => e,
            e => LqrError::InRound {
                round,
                source: Box::new(e),
            },
        }
    }

    /// True for failures caused by the numerics (divergence, finite escape) rather than bad input.
    pub fn is_divergence(&self) -> bool {
        match self {
            LqrError::PlantDivergence { .. } | LqrError::RiccatiBlowUp { .. } => true,
            LqrError::InRound { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    /// Round index attached to the error, if any.
    pub fn round(&self) -> Option<usize> {
        match self {
            LqrError::InRound { round, .. } => Some(*round),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, LqrError>;
