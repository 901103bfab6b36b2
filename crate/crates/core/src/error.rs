use thiserror::Error;

/// Errors produced by model construction, the PDE solvers, and the
/// Monte Carlo / lattice verification layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "explicit scheme violates the CFL bound: {steps} time steps requested, \
         at least {required} required"
    )]
    CflViolation { steps: usize, required: usize },

    #[error("policy iteration did not converge within {max_iterations} iterations")]
    PolicyIterationDiverged { max_iterations: usize },

    #[error("linear solver did not converge within {max_sweeps} sweeps (residual {residual:e})")]
    LinearSolverDiverged { max_sweeps: usize, residual: f64 },

    #[error("agent mismatch: {0}")]
    AgentMismatch(String),

    #[error(
        "invalid trinomial branch probabilities at step {step}: increment {increment} is too \
         small for the local volatility (probability {probability})"
    )]
    InvalidBranch {
        step: usize,
        increment: f64,
        probability: f64,
    },

    #[error("feedback selector surface does not cover the simulation: {0}")]
    SurfaceCoverage(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed surface file: {0}")]
    MalformedSurface(String),
}

pub type Result<T> = std::result::Result<T, Error>;
