use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kinetic singularity: Phi(0) is infinite for gamma = {gamma}")]
    KineticSingularity { gamma: f64 },

    #[error("degenerate pair: zero relative velocity")]
    DegeneratePair,

    #[error("mass below threshold: {mass:e}")]
    MassBelowThreshold { mass: f64 },

    #[error("truncation tail {tail:e} exceeds tolerance {tolerance:e}")]
    TailNotResolved { tail: f64, tolerance: f64 },

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("quadrature inconsistency: value {value:e} is below -{error:e}")]
    QuadratureInconsistency { value: f64, error: f64 },

    #[error("vacuous bound: the density vanishes on the integration plane")]
    Vacuous,

    #[error("density `{0}` has no sampler")]
    MissingSampler(String),

    #[error(
        "time step too large: {per_particle:.3} expected collisions per particle per step (limit 0.5); try dt <= {suggested_dt:.6e}"
    )]
    TimeStepTooLarge { per_particle: f64, suggested_dt: f64 },

    #[error("point lies outside the comparability ellipsoid")]
    OutsideEllipsoid,

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures that come from the numerics rather than from the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence(_)
                | Error::QuadratureInconsistency { .. }
                | Error::TailNotResolved { .. }
                | Error::TimeStepTooLarge { .. }
                | Error::Divergent(_)
                | Error::KineticSingularity { .. }
        )
    }
}
