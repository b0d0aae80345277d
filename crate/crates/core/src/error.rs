use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),
    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NonOrthonormal(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("pose required in temporal mode (frame {0})")]
    MissingPose(usize),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
