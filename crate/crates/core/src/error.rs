use thiserror::Error;

/// Errors produced anywhere in the codec.
#[derive(Debug, Error)]
pub enum Error {
    /// An alphabet does not fit into the coding table's multiplier.
    #[error("alphabet of {alphabet} symbols does not fit into 2^{precision}")]
    Capacity { alphabet: usize, precision: u32 },

    /// A bits-back decode needed fresh bits and the seed source was empty.
    #[error("initial bits exhausted after drawing {drawn_bytes} seed bytes")]
    InitialBitsExhausted { drawn_bytes: usize },

    /// Malformed, truncated or inconsistent serialized data.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// A probability model is invalid (non-monotone cdf, non-finite parameters, ...).
    #[error("model error: {0}")]
    Model(String),

    /// Shapes, sizes or identifiers that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Latents that cannot be accounted for under the model's discretization.
    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}
