use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (left {left:?}, right {right:?})")]
    DimensionMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image dimensions {width}x{height} not divisible by {required}; pad to the next multiple")]
    IndivisibleDimensions {
        width: usize,
        height: usize,
        required: usize,
    },

    #[error("convex upsample kernels are not normalized: group sum {sum} at ({x}, {y})")]
    UnnormalizedKernels { x: usize, y: usize, sum: f64 },

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("flow file: {0}")]
    FloFormat(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::DimensionMismatch {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
