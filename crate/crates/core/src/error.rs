use thiserror::Error;

/// Errors produced by model construction, the estimation problems and the simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sensor {sensor} coincides with point source {source_index}")]
    SingularConfiguration { sensor: usize, source_index: usize },

    #[error("target point coincides with point source {0}")]
    TargetOnSource(usize),

    #[error("target vector alpha is zero")]
    ZeroVector,

    /// The bound problem optimum vanished: some beta in the null space of G has
    /// alpha . beta = 1, so q is not estimable from the sensors.
    #[error(
        "bound problem optimum {optimum:e} is zero; q(theta) is not estimable (infinite bound)"
    )]
    UnboundedPrecision { optimum: f64 },

    #[error("consistency condition G^T w = alpha has no solution (residual {residual:e})")]
    InconsistentConstraint { residual: f64 },

    #[error("dual protocol problem is unbounded; q(theta) is not estimable")]
    Unbounded,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("instance too large for brute-force enumeration (d = {d}, k = {k})")]
    InstanceTooLarge { d: usize, k: usize },

    #[error("gradient matrix has rank {rank} < {k}")]
    RankDeficient { rank: usize, k: usize },

    #[error("accumulated phase bound {phase:.4} reaches pi; estimate would wrap")]
    PhaseWrap { phase: f64 },

    #[error("weight vector is zero")]
    DegenerateWeights,

    #[error("Gauss-Newton parameter recovery did not converge after {iterations} iterations")]
    NewtonDivergence { iterations: usize },

    #[error("Fisher matrix is not symmetric (max asymmetry {asymmetry:e})")]
    AsymmetricFisher { asymmetry: f64 },

    #[error("no identifiable sensor configuration found")]
    NoIdentifiableConfiguration,
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input.
    Input,
    /// The instance is well formed but mathematically infeasible (not estimable).
    Infeasible,
    /// A simulation step failed.
    Simulation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::SingularConfiguration { .. }
            | Error::TargetOnSource(_)
            | Error::ZeroVector
            | Error::InstanceTooLarge { .. }
            | Error::AsymmetricFisher { .. } => ErrorClass::Input,
            Error::UnboundedPrecision { .. }
            | Error::InconsistentConstraint { .. }
            | Error::Unbounded
            | Error::Infeasible
            | Error::RankDeficient { .. }
            | Error::NoIdentifiableConfiguration => ErrorClass::Infeasible,
            Error::PhaseWrap { .. } | Error::DegenerateWeights | Error::NewtonDivergence { .. } => {
                ErrorClass::Simulation
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} contains non-finite entries"
        )))
    }
}
