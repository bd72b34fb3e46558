use thiserror::Error;

pub type Result<T> = std::result::Result<T, FarimaError>;

#[derive(Debug, Error)]
pub enum FarimaError {
    #[error("polynomial must have leading coefficient 1, got {0}")]
    NonUnitLeading(f64),

    #[error("parameter vector is outside the feasible region: {0}")]
    Infeasible(String),

    #[error("invalid GARCH parameters (omega={omega}, alpha={alpha}, beta={beta}): need omega > 0, alpha >= 0, beta >= 0, alpha + beta < 1")]
    InvalidGarch { omega: f64, alpha: f64, beta: f64 },

    #[error("sample size {n} is too small: at least {min} observations required")]
    SampleTooSmall { n: usize, min: usize },

    #[error("lagged regressor covariance is singular at AR order {r}")]
    SingularRegressors { r: usize },

    #[error("Phi(1) is singular at AR order {r}; try a smaller order")]
    SingularPhiAtOne { r: usize },

    #[error("no AR order in 1..={r_max} could be fitted to the score process")]
    NoValidOrder { r_max: usize },

    #[error("matrix {name} is singular (condition number {condition:e})")]
    Singular { name: &'static str, condition: f64 },

    #[error("self-normalization matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularSelfNormalizer { min_eigenvalue: f64 },

    #[error("diagonal entry {index} of {name} must be positive, got {value}")]
    NonPositiveDiagonal {
        name: &'static str,
        index: usize,
        value: f64,
    },

    #[error("nonpositive price {price} at data row {row}")]
    NonPositivePrice { row: usize, price: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
