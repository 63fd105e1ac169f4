use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("support mismatch: {left:?} vs {right:?}")]
    SupportMismatch { left: Vec<u32>, right: Vec<u32> },

    #[error("invalid probability law: {0}")]
    InvalidLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate law: {0}")]
    DegenerateLaw(String),

    #[error("NaN produced in {0}")]
    NotANumber(&'static str),

    #[error("quadrature did not converge: estimated relative error {rel_error:.3e} after {subdivisions} subdivisions")]
    Quadrature { rel_error: f64, subdivisions: usize },

    #[error("dual solver stalled: residual {residual:.3e} after {iterations} iterations")]
    SolverStall {
        residual: f64,
        iterations: usize,
        best: Box<crate::rate::RateDual>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration too large: {size} sequences exceeds the limit {limit}")]
    SizeGuard { size: u128, limit: u128 },

    #[error("statistical failure: {0}")]
    Statistical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "power iteration did not converge after {iterations} iterations (change {change:.3e})"
    )]
    PowerIteration { iterations: usize, change: f64 },

    #[error("root bracketing failed: {0}")]
    Bracket(String),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotANumber(_)
                | Error::Quadrature { .. }
                | Error::SolverStall { .. }
                | Error::PowerIteration { .. }
                | Error::Bracket(_)
                | Error::Statistical(_)
        )
    }
}
