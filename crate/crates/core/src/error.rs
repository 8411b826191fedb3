use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: non-finite value in column `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate observation for firm {firm}, year {year}")]
    DuplicateObservation { firm: i64, year: i64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
