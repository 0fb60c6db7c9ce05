use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} for {field} is outside [0, 1]")]
    InvalidRange { field: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty set: {0}")]
    EmptySet(&'static str),

    #[error("sigma is zero: every VA pair coincides")]
    DegenerateSigma,

    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("pair selection needs at least {needed} images, got {got}")]
    InsufficientImages { needed: usize, got: usize },

    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("validation failed for `{id}`: {reason}")]
    Validation { id: String, reason: String },

    #[error("raw value {value} outside the {scale} scale")]
    OutOfScaleRange { scale: &'static str, value: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),

    #[error("retrieval index is empty")]
    EmptyIndex,

    #[error("records mix modalities {0} and {1}")]
    MixedModalities(String, String),

    #[error("template slot `{{{0}}}` has no vocabulary")]
    UnboundSlot(String),

    #[error("template expansion would produce {count} prompts (cap {cap})")]
    ExpansionTooLarge { count: u128, cap: usize },

    #[error("prompt list is empty")]
    EmptyPromptList,

    #[error("no clips to summarize")]
    EmptyClips,

    #[error("budget of {budget_s} s admits no clip")]
    BudgetTooSmall { budget_s: f64 },

    #[error("summary has zero duration")]
    EmptySummary,

    #[error("refinement needs 4 few-shot examples, {0} configured")]
    MissingExamples(usize),

    #[error("no refinement client available for caption: {0:?}")]
    UnavailableClient(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
