use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty stream")]
    EmptyStream,
    #[error("event {index} at ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("invalid window config: {0}")]
    WindowConfig(&'static str),
    #[error("dimension {0} cannot be factorized for a TT layer")]
    Unplannable(usize),
    #[error("degenerate batch: batch norm needs at least two elements per channel")]
    DegenerateBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("requested {requested} items from a set of {available}")]
    TooMany { requested: usize, available: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("backward called without a cached forward pass in {0}")]
    NoCache(&'static str),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
