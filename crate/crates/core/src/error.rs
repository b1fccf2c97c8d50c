use thiserror::Error;

use crate::model::RomState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inertia coefficient M_eq = {m_eq:e} is below the singularity guard")]
    SingularInertia { m_eq: f64 },

    #[error("time {t} s is outside the schedule window [{start}, {end}] s")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    #[error("network impedance Z_g + Z_f vanishes")]
    DegenerateNetwork,

    #[error("fault operating point did not converge after {iterations} iterations (last update {last_update:e} pu)")]
    NonConvergent { iterations: usize, last_update: f64 },

    #[error("impedance fit needs at least 3 points in [{lo}, {hi}] Hz, found {found}")]
    InsufficientData { lo: f64, hi: f64, found: usize },

    #[error("reactance slope {slope:e} ohm/Hz is not positive; the fit window is not inductive")]
    NonPositiveSlope { slope: f64 },

    #[error("invalid fault window: clear at {clear} s does not follow apply at {apply} s")]
    InvalidFaultWindow { apply: f64, clear: f64 },

    #[error("invalid event schedule: {0}")]
    InvalidSchedule(String),

    #[error("step size fell below {h_min:e} s at t = {t} s")]
    StepFailure { t: f64, h_min: f64 },

    #[error("state became non-finite at t = {t} s")]
    NonFiniteState { t: f64 },

    #[error("reverse-time trajectory left the escape radius at t = {t} s (state {state:?})")]
    DivergenceGuard { t: f64, state: RomState },

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("matrix is not Hurwitz (eigenvalue real parts {re1:e}, {re2:e})")]
    NotHurwitz { re1: f64, re2: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("{failed} of {total} seed points did not converge to the equilibrium")]
    SeedNotAttracted { failed: usize, total: usize },

    #[error("boundary refinement hit the depth cap with {unresolved} unresolved gaps (largest {max_gap:e})")]
    RefinementDepthExceeded {
        unresolved: usize,
        max_gap: f64,
        partial: Box<crate::roa::TlroaBoundary>,
    },

    #[error("initial fault state is already outside the boundary")]
    ImmediateExit,

    #[error("{context}, line {line}: {reason}")]
    Parse {
        context: String,
        line: u64,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure stems from bad input rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::InsufficientData { .. }
                | Error::NonPositiveSlope { .. }
                | Error::InvalidFaultWindow { .. }
                | Error::InvalidSchedule(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Io(_)
        )
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
