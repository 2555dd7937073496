use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),

    #[error("quadrature did not converge: estimated error {error:e} after {panels} panels")]
    NonConvergence { error: f64, panels: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{} rows failed; first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    Rows(Vec<Error>),

    #[error("outcomes mix test families or parameters: {0}")]
    FamilyMix(String),

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label error: {0}")]
    Labels(String),

    #[error("simulation cell {cell}, replication {replication}: {source}")]
    Simulation {
        cell: String,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_row(self, row: usize) -> Self {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }
}
