use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("spatial dimensions {height}x{width} must be multiples of {multiple}")]
    NotDivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("distribution maps sum to zero at ({row}, {col})")]
    ZeroSum { row: usize, col: usize },

    #[error("backward pass needs a recording forward cache: {0}")]
    Cache(&'static str),

    #[error("scorer returned {0}, outside the open interval (0, 1)")]
    ScoreOutOfRange(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
