use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("disturbance norm {norm} exceeds bound {bound}")]
    DisturbanceOutOfBounds { norm: f64, bound: f64 },

    #[error("integration produced a non-finite state")]
    NonFiniteState,

    #[error("matrix exponential series did not converge")]
    SeriesNonConvergence,

    #[error("pair (A, B) is not stabilizable: uncontrollable eigenvalue {re:.6}{im:+.6}i")]
    NotStabilizable { re: f64, im: f64 },

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    RiccatiNonConvergence { iterations: usize, residual: f64 },

    #[error("tube certificate violated: {0}")]
    Certificate(String),

    #[error("closed-loop spectral radius {0} >= 1, invariant series diverges")]
    UnstableClosedLoop(f64),

    #[error("tightened constraints are empty at horizon step {step}")]
    InfeasibleTightening { step: usize },

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error("quadratic program hit {iterations} iterations with KKT residual {residual:e}")]
    QpMaxIter {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("time {t} outside task duration [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
}
