use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },

    #[error("unknown {kind} type label `{label}`")]
    UnknownType { kind: &'static str, label: String },

    #[error("non-finite attribute value at line {line}")]
    NonFiniteAttr { line: usize },

    #[error("unparseable timestamp at row {row}: {value}")]
    BadTimestamp { row: usize, value: String },

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("ordinal {k} out of range 1..={max}")]
    OrdinalOutOfRange { k: usize, max: usize },

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),

    #[error("alignment does not refer to this stream: {0}")]
    AlignmentMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("negative time delta {0}")]
    NegativeDelta(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("labels contain a single class only")]
    SingleClass,

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("event ordering violated: candidate {j} does not precede target {k}")]
    OrderViolation { j: usize, k: usize },

    #[error("nothing to explain: target {0} has no prior events")]
    NothingToExplain(usize),

    #[error("explanation subset is not contained in the candidate set")]
    NotASubset,

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn other(msg: impl Into<String>) -> Self {
        Error::Other(msg.into())
    }
}
