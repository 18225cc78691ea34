use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("row {row}: malformed record: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    ParseValue { row: usize, column: String, value: String },

    #[error("row {row}, column `{column}`: level out of range ({value} not in 1..={levels})")]
    LevelOutOfRange { row: usize, column: String, value: String, levels: usize },

    #[error("row {row}: group value `{value}` outside {{1,2}}")]
    BadGroup { row: usize, value: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid parameters: {0}")]
    Parameters(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite pseudolikelihood term for variable `{variable}`")]
    NonFinite { variable: String },

    #[error("backtracking did not find a majorizing step below L = {0:e}")]
    LipschitzOverflow(f64),

    #[error("simulation failed: {0}")]
    Generation(String),

    #[error("stability selection failed: {0}")]
    Stability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
