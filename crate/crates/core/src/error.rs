use thiserror::Error;

pub type Result<T> = std::result::Result<T, MrError>;

#[derive(Debug, Error)]
pub enum MrError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("column count mismatch at row {row}: expected {expected} columns, found {found}")]
    ColumnCountMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric value {value:?} in column {column} at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value in column {column} at row {row}")]
    NonFinite { row: usize, column: String },

    #[error("non-positive standard error at row {row} (column {column})")]
    NonPositiveSe { row: usize, column: String },

    #[error("empty field in column {column} at row {row}")]
    EmptyField { row: usize, column: String },

    #[error("duplicate variant_id {id:?} at row {row}")]
    DuplicateVariant { row: usize, id: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid correlation matrix: {0}")]
    Correlation(String),

    #[error("J={found} < {required} required for {method}")]
    TooFewVariants {
        method: &'static str,
        required: usize,
        found: usize,
    },

    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(String),

    #[error("orientation violated: variant {variant_id} has negative association with reference {reference}; run orientation first")]
    Orientation {
        reference: String,
        variant_id: String,
    },

    #[error("unknown risk factor {0:?}")]
    UnknownRiskFactor(String),

    #[error("covariance matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("zero weighted variance in denominator")]
    ZeroVariance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl From<csv::Error> for MrError {
    fn from(e: csv::Error) -> Self {
        MrError::Csv(e.to_string())
    }
}
