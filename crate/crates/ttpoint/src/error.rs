use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ttpoint_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// 2 for configuration problems, 3 for everything concerning data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Core(e) => match e {
                ttpoint_core::Error::Config(_) | ttpoint_core::Error::WindowConfig(_) | ttpoint_core::Error::Unplannable(_) => 2,
                _ => 3,
            },
            Error::Io { .. } | Error::Format(_) => 3,
        }
    }
}
