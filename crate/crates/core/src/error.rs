use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frontier prediction {value} is not positive{}", fmt_row(*.index))]
    NonPositivePrediction { index: Option<usize>, value: f64 },

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("no coefficient vector keeps every in-region prediction positive")]
    NoInteriorPoint,

    #[error("Jacobian of the log-predictions is singular")]
    SingularJacobian,

    #[error("design matrix is numerically singular")]
    SingularDesign,

    #[error("no feasible split among the proposed knot/direction pairs")]
    NoFeasibleSplit,

    #[error("coefficient sampler accepted no draw after {0} proposals")]
    NonConvergent(usize),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("denominator slope {0} is at or below the slope floor")]
    ZeroDenominator(f64),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid data at row {row}: {msg}")]
    InvalidData { row: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_row(index: Option<usize>) -> String {
    match index {
        Some(i) => format!(" at observation {i}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
