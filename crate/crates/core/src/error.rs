use std::fmt;

use thiserror::Error;

/// One violated invariant found by [`crate::problem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A block that must be exactly zero has a nonzero entry.
    Structure {
        t: usize,
        matrix: &'static str,
        block: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    /// A matrix that must be PSD (or PD) is not. `t` is `None` for
    /// horizon-level matrices such as `Sigma_init`.
    Definiteness {
        t: Option<usize>,
        matrix: &'static str,
        min_eigenvalue: f64,
        requirement: &'static str,
    },
    Dimension {
        t: Option<usize>,
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure { t, matrix, block, row, col, value } => write!(
                f,
                "StructureError: {matrix}_{t} block {block} must be zero, found {value:e} at ({row}, {col})"
            ),
            Violation::Definiteness { t, matrix, min_eigenvalue, requirement } => match t {
                Some(t) => write!(
                    f,
                    "DefinitenessError: {matrix}_{t} must be {requirement}, min eigenvalue {min_eigenvalue:e}"
                ),
                None => write!(
                    f,
                    "DefinitenessError: {matrix} must be {requirement}, min eigenvalue {min_eigenvalue:e}"
                ),
            },
            Violation::Dimension { t, matrix, expected, found } => {
                let at = t.map(|t| format!("_{t}")).unwrap_or_default();
                write!(
                    f,
                    "DimensionError: {matrix}{at} expected {}x{}, found {}x{}",
                    expected.0, expected.1, found.0, found.1
                )
            }
        }
    }
}

/// Every violation found in a problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem:\n{0}")]
    Invalid(ValidationReport),
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("DimensionError: {0}")]
    Dimension(String),
    #[error("SingularInnovation: innovation covariance not positive definite at t={t}")]
    SingularInnovation { t: usize },
    #[error("SingularHessian: control Hessian not positive definite at t={t}")]
    SingularHessian { t: usize },
    #[error("EliminationSingular: gain elimination matrix singular at t={t}")]
    EliminationSingular { t: usize },
    #[error("PivotFailure: pivot block {block} of the boundary system is singular")]
    PivotFailure { block: usize },
    #[error("ConsistencyError: {what} at t={t} deviates by {deviation:e}")]
    Consistency {
        what: &'static str,
        t: usize,
        deviation: f64,
    },
    #[error("HorizonExceeded: controller stepped at t={t} with horizon {horizon}")]
    HorizonExceeded { t: usize, horizon: usize },
    #[error("StructureError: {0}")]
    Structure(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
