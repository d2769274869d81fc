use indirect_core::ErrorCategory;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const NOT_IDENTIFIABLE: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A config value is invalid; `path` names the offending key.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Core(#[from] indirect_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("scatter plots need 2-D features, this run has {0}")]
    UnsupportedDimension(usize),
    #[error("not identifiable: {0}")]
    NotIdentifiable(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Self::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Wraps a core error raised while building the value at `path`.
    pub fn at(path: impl Into<String>, err: indirect_core::Error) -> Self {
        match err.category() {
            ErrorCategory::Config => Self::config(path, err),
            _ => Self::Core(err),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => exit::CONFIG,
            Self::Core(e) => match e.category() {
                ErrorCategory::Config => exit::CONFIG,
                ErrorCategory::Data => exit::DATA,
                ErrorCategory::Numerical => exit::NUMERICAL,
            },
            Self::Io { .. } | Self::Data(_) | Self::UnsupportedDimension(_) => exit::DATA,
            Self::NotIdentifiable(_) => exit::NOT_IDENTIFIABLE,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
