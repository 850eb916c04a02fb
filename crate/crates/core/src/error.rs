use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("requested {requested} eigenvectors but at most {max} are available")]
    RankOutOfRange { requested: usize, max: usize },

    #[error("data has zero scatter (all rows identical)")]
    ZeroScatter,

    #[error("self-pair ({0}, {0}) has no constraint semantics")]
    SelfPair(usize),

    #[error("row index {index} out of bounds for {rows} rows")]
    IndexOutOfBounds { index: usize, rows: usize },

    #[error("invalid constraint set: {0}")]
    InvalidConstraints(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("precision matrix is numerically singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("both posterior masses underflow for pair with omega'Sigma omega = {spread:.6e}")]
    PosteriorUnderflow { spread: f64 },

    #[error("no unlabeled pairs left to select from")]
    EmptyPool,

    #[error("data has no labels")]
    MissingLabels,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
