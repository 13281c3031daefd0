use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A top-k instance violated its invariants (non-positive cost, budget
    /// out of range, non-finite entries, empty input).
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A solver or schedule configuration is unusable.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Vector or layout lengths do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The backward-pass denominator k - a2 is numerically zero while the
    /// mask is not exactly binary, so the dual-variable correction is
    /// indeterminate.
    #[error("singular backward pass: |k - a2| = {gap:e} is below 1e-12")]
    SingularBackward { gap: f64 },

    /// Pearson correlation of a constant indicator (all-zero or all-one) is
    /// undefined.
    #[error("undefined correlation: {0}")]
    DegenerateCorrelation(String),

    /// File contents failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
