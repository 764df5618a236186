use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    // tensor file format
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported tensor rank {0} (expected 1 or 2)")]
    BadRank(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("quadrature did not converge: estimate {estimate:e}, error {error:e} after {intervals} intervals")]
    NonConvergence {
        estimate: f64,
        error: f64,
        intervals: usize,
    },
    #[error("optimum at search boundary C = {c} (search range [{lo}, {hi}])")]
    BoundarySolution { c: f64, lo: f64, hi: f64 },

    #[error("quantizer input {value} at index {index} is positive; rows must be max-shifted")]
    PositiveInput { index: usize, value: f64 },
    #[error("code {code} out of range for {bits}-bit quantization")]
    CodeOutOfRange { code: u32, bits: u8 },
    #[error("lookup tables do not match quantization spec: {0}")]
    LutMismatch(String),
}
