use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole pipeline.
///
/// `NonFiniteGradient` and `DegenerateVector` signal numeric failure; the
/// remaining variants are input or configuration problems. The CLI maps the
/// two groups to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("class {class} has no entries")]
    MissingClass { class: usize },

    #[error("batch of {got} too small: need at least {min}")]
    BatchTooSmall { min: usize, got: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("malformed file{}: {reason}", path_suffix(.path))]
    Format { path: Option<String>, reason: String },

    #[error("bad data: {0}")]
    Data(String),

    #[error("bad config: {0}")]
    Config(String),

    #[error("example {id}: {source}")]
    ForExample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{label}: {source}")]
    Context {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn path_suffix(path: &Option<String>) -> String {
    match path {
        Some(p) => format!(" {p}"),
        None => String::new(),
    }
}

impl Error {
    pub fn format(reason: impl Into<String>) -> Self {
        Error::Format { path: None, reason: reason.into() }
    }

    /// Attaches a file path to format errors raised below the path level.
    pub fn with_path(self, path: &std::path::Path) -> Self {
        match self {
            Error::Format { path: None, reason } => {
                Error::Format { path: Some(path.display().to_string()), reason }
            }
            other => other,
        }
    }

    /// Attaches the offending example id, as per-item pipeline stages do.
    pub fn for_example(self, id: impl Into<String>) -> Self {
        Error::ForExample { id: id.into(), source: Box::new(self) }
    }

    /// Prefixes the error with a phase or unit label ("arm pt-kl", say).
    pub fn context(self, label: impl Into<String>) -> Self {
        Error::Context { label: label.into(), source: Box::new(self) }
    }

    /// True for errors that indicate numeric breakdown rather than bad
    /// input. Wrappers delegate to the root cause.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteGradient(_) | Error::DegenerateVector(_) => true,
            Error::ForExample { source, .. } | Error::Context { source, .. } => {
                source.is_numeric()
            }
            _ => false,
        }
    }
}
