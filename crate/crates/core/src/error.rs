use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column `{0}` has no observed values")]
    EmptyColumn(String),

    #[error("confidence undefined: antecedent never occurs")]
    UndefinedConfidence,

    #[error("lift undefined: consequent never occurs")]
    UndefinedLift,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("kernel bandwidth is zero")]
    ZeroBandwidth,

    #[error("empty input")]
    EmptyInput,

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
