use thiserror::Error;

/// Errors surfaced by network construction, LMGF evaluation, the tail solver
/// and the Monte Carlo estimators.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("topology is not connected (agent {agent} unreachable from agent 0)")]
    Disconnected { agent: usize },

    #[error("combination matrix row {row} sums to {sum}, expected 1 within 1e-12")]
    NotStochastic { row: usize, sum: f64 },

    #[error("combination matrix has weight {value} at ({k},{l}) outside the neighborhood")]
    SupportViolation { k: usize, l: usize, value: f64 },

    #[error("second eigenvalue magnitude {lambda2} is not below 1; matrix does not mix")]
    SpectralGap { lambda2: f64 },

    #[error("power iteration did not reach residual {tol} within {cap} iterations (residual {residual})")]
    PowerIterationDiverged { tol: f64, cap: usize, residual: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (estimated error {err})")]
    Quadrature { a: f64, b: f64, err: f64 },

    #[error("no bracket: phi' saturates at {reached} before reaching gamma = {gamma}; gamma lies outside the achievable range")]
    NoBracket { gamma: f64, reached: f64 },

    #[error("root solver exceeded {cap} iterations")]
    SolverDiverged { cap: usize },

    #[error("threshold gamma = {gamma} must be {side} the mean E[x] = {mean} for this tail direction")]
    ThresholdSide {
        gamma: f64,
        mean: f64,
        side: &'static str,
    },

    #[error("lattice-valued statistic: exact asymptotics are only defined for non-lattice models")]
    LatticeModel,
}

pub type Result<T> = std::result::Result<T, Error>;
