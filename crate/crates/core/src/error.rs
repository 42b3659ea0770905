use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("regression problem has no samples")]
    EmptyData,
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("feasible interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("action {action} lies outside the feasible interval [{lo}, {hi}]")]
    OutOfFeasible { action: f64, lo: f64, hi: f64 },
    #[error("action {action} is infeasible: budget allows at most {max}")]
    InfeasibleAction { action: f64, max: f64 },
    #[error("mean-field iterate left the box by {excess:.3e} at round {round}")]
    IterationDiverged { round: usize, excess: f64 },
    #[error("reference equilibrium did not converge in {rounds} rounds (last increment {last_increment:.3e})")]
    OracleNoConvergence { rounds: usize, last_increment: f64 },
    #[error("trajectory too short for contraction diagnostics: need at least 3 points, got {0}")]
    InsufficientTrajectory(usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
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
