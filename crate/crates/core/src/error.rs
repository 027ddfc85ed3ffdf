use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates its documented invariant.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("learning-rate prefix sum is zero up to tau = {tau}")]
    DegenerateSchedule { tau: usize },

    #[error("bound term is singular at k = {k}")]
    Singular { k: usize },

    #[error("no closed form is derived for {0}")]
    NotDerived(String),

    #[error("optimum is degenerate: the bound is monotone in the learning rate when D or G is zero")]
    DegenerateOptimum,

    #[error("quadrature failed on [{a}, {b}]: {reason}")]
    Quadrature { a: f64, b: f64, reason: String },

    #[error("insufficient data: need at least {needed}, got {got} ({context})")]
    InsufficientData { needed: usize, got: usize, context: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("tau = {tau}: {source}")]
    AtTau {
        tau: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing or malformed column `{column}`")]
    Schema { column: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    ///
    /// The CLI maps these to exit status 2 and everything else to 1.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::DegenerateSchedule { .. }
            | Error::Singular { .. }
            | Error::DegenerateOptimum
            | Error::Quadrature { .. }
            | Error::InsufficientData { .. }
            | Error::Split(_) => true,
            Error::AtTau { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
