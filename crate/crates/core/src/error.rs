use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (zero vector,
    /// coincident points, non-positive length...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Collinear or otherwise degenerate geometry where the scattering
    /// parametrization is singular.
    #[error("singular configuration: {0}")]
    Singular(String),

    /// An energy or kinematic parameter outside the reachable range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Inconsistent configuration (geometry, energy grid, source levels).
    #[error("configuration error: {0}")]
    Config(String),

    /// Operator and data were built for different geometries or grids.
    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    /// A stage needs a data channel the input does not carry.
    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn singular(msg: impl Into<String>) -> Self {
        Error::Singular(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
