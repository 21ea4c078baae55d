use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: span out of bounds: [{start}, {end}) with {len} words")]
    SpanOutOfBounds {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("empty word at position {0}")]
    EmptyWord(usize),
    #[error("empty document")]
    EmptyDocument,
    #[error("document {id:?} is invalid: {}", violations.join("; "))]
    InvalidDocument { id: String, violations: Vec<String> },
    #[error("invalid label space: {0}")]
    LabelSpace(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid dropout rate {0}")]
    InvalidDropout(f64),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("k = {k} out of range for n = {n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (documents {docs:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        docs: Vec<String>,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate variance")]
    DegenerateVariance,

    #[error("invalid study plan: {0}")]
    Plan(String),
    #[error("missing rationale for review {review_id:?} ({method}, level {level})")]
    MissingRationale {
        review_id: String,
        method: String,
        level: f64,
    },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown review {0:?}")]
    UnknownReview(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRecord { .. } => "malformed_record",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::SpanOutOfBounds { .. } => "span_out_of_bounds",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::EmptyWord(_) => "empty_word",
            Error::EmptyDocument => "empty_document",
            Error::InvalidDocument { .. } => "invalid_document",
            Error::LabelSpace(_) => "label_space",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidDropout(_) => "invalid_dropout",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::KOutOfRange { .. } => "k_out_of_range",
            Error::InvalidTemperature(_) => "invalid_temperature",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::EmptySplit(_) => "empty_split",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyInput(_) => "empty_input",
            Error::DegenerateVariance => "degenerate_variance",
            Error::Plan(_) => "plan",
            Error::MissingRationale { .. } => "missing_rationale",
            Error::UnknownDocument(_) => "unknown_document",
            Error::UnknownReview(_) => "unknown_review",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::MissingInput(_) => "missing_input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
