use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A tilt parameter fell outside the open interval on which the cumulant
    /// generating function is finite.
    #[error("t = {t} is outside the cumulant domain ({lo}, {hi})")]
    Domain { t: f64, lo: f64, hi: f64 },

    /// A requested mean slope is not attainable by tilting the step law.
    #[error("slope {slope} is not attainable{}", step_suffix(*.step))]
    Slope { slope: f64, step: Option<usize> },

    #[error("invalid step law: {0}")]
    InvalidLaw(String),

    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),

    #[error("Newton/bisection failed to converge for slope {slope} (residual {residual:e})")]
    Convergence { slope: f64, residual: f64 },

    /// The conditioning event has probability zero on the lattice.
    #[error("conditioning event is empty (no admissible path)")]
    Infeasible,

    #[error("height cap too low: mass-loss diagnostic {mass_loss:e} exceeds tolerance {tol:e} (cap = {cap})")]
    MassLoss {
        mass_loss: f64,
        tol: f64,
        cap: usize,
    },

    #[error(
        "sandwich replicas not coupled after {sweeps} sweeps (gap {gap:e} > tolerance {tol:e})"
    )]
    NotCoupled { sweeps: usize, gap: f64, tol: f64 },

    #[error("degenerate construction: {0}")]
    Degenerate(String),

    #[error("insufficient data: need at least {needed} positive points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" (step k = {k}: obstacle too steep for this step law)"),
        None => String::new(),
    }
}
