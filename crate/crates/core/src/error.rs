//! Crate-wide error type.

/// Errors surfaced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// An operation received an empty input it cannot define a result for.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A parameter value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A sequence would exceed the model's maximum context length.
    #[error("context overflow: position {position} exceeds maximum context {max_context}")]
    ContextOverflow { position: usize, max_context: usize },

    /// The training loss became non-finite.
    #[error("training diverged: loss became non-finite at step {step}")]
    TrainingDiverged { step: usize },

    /// Probe training requires examples from both classes.
    #[error("single-class input: probe training requires both positive and negative labels")]
    SingleClass,

    /// Input is degenerate for the requested statistic
    /// (constant ranks, equal centroids, too few points, zero vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A serialized artifact is malformed (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
