use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("copula parameter {0} outside the admissible range")]
    ParameterDomain(f64),
    #[error("component {0} has no weight mass")]
    EmptyComponent(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
