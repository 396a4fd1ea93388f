//! Crate-wide error type.

/// Errors produced by tensor construction, layer evaluation, network
/// building, and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape had a zero extent or an inconsistent element count.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Two operands disagreed on shape where equality is required.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A buffer length did not match the shape it must fill.
    #[error("data length {got} does not match expected {expected}")]
    DataLength { expected: usize, got: usize },

    /// A class label fell outside the network's output range.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// A network description failed validation; `stage` names the
    /// offending part of the spec.
    #[error("invalid spec at {stage}: {message}")]
    Spec { stage: String, message: String },

    /// A builtin architecture name was not recognised.
    #[error("unknown builtin spec `{name}`; known specs: {known}")]
    UnknownSpec { name: String, known: String },

    /// The requested input resolution cannot flow through the network.
    #[error("unsupported resolution: {0}")]
    Resolution(String),

    /// A config file failed to parse or violated the schema.
    #[error("config error: {0}")]
    Config(String),

    /// A tensor file or manifest failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    /// A checkpoint file was malformed or did not match the network.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A dataset was empty or otherwise unusable.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// An operation was asked to run in a mode it does not support.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
