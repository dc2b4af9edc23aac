use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: stage label {label:?} is not in the stage coding")]
    Coding { row: usize, label: String },

    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column {column:?}: missing value")]
    MissingCell { row: usize, column: String },

    #[error("formula syntax error at byte {offset}: {message}")]
    Formula { offset: usize, message: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unknown variable {0:?}")]
    UnknownVariable(String),

    #[error(
        "factor {factor:?} has level {level:?} that was not present when the model was fitted"
    )]
    UnseenLevel { factor: String, level: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(
        "penalized Newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("unsupported model archive version {found} (expected {expected})")]
    ArchiveVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the input data or its description rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Coding { .. }
                | Error::Parse { .. }
                | Error::MissingCell { .. }
                | Error::Formula { .. }
                | Error::UnknownVariable(_)
                | Error::UnseenLevel { .. }
                | Error::Dimension(_)
                | Error::InvalidArgument(_)
                | Error::ArchiveVersion { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
