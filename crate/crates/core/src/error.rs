use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid feature grid: {0}")]
    InvalidGrid(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("degenerate triangle: {0}")]
    DegenerateTriangle(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
