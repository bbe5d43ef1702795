use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("missing realization: {what} at step {t}")]
    MissingRealization { what: &'static str, t: usize },
    #[error("initial state norm {norm} exceeds declared bound {bound}")]
    InitialState { norm: f64, bound: f64 },
    #[error("factor Q is singular")]
    SingularFactor,
    #[error("enumeration needs {branches:.3e} branches, budget is {budget}")]
    BudgetExceeded { branches: f64, budget: u64 },
    #[error("{0} has no finite support")]
    NotEnumerable(&'static str),
    #[error("sensitivity condition fails: lhs {lhs} is not below {rhs}")]
    ConditionFails { lhs: f64, rhs: f64 },
    #[error("invalid step-size plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("recovered noise differs from drawn noise by {discrepancy:e} at step {t}")]
    NoiseRecovery { t: usize, discrepancy: f64 },
    #[error("{what} did not converge (residual {residual:e})")]
    NotConverged { what: &'static str, residual: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
