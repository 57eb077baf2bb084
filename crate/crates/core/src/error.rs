use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of a numerical function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("bisection endpoints do not bracket a root: f({lo:e}) = {f_lo:e}, f({hi:e}) = {f_hi:e}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    /// The problem instance admits no feasible allocation. The message names the
    /// violated condition.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An allocation violates its own shape rules, e.g. data on a zero-length slot.
    #[error("inconsistent allocation: {0}")]
    Inconsistent(String),

    #[error("degenerate case: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("instance too large: {0}")]
    TooLarge(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}
