use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({re}, {im}) is not strictly inside the unit disk")]
    OutsideDisk { re: f64, im: f64 },

    #[error("point ({re}, {im}) could not be reduced to the octagon within {steps} steps")]
    NotReducible { re: f64, im: f64, steps: usize },

    #[error("point ({re}, {im}) is outside the sampled neighbourhood of the octagon")]
    OutOfRange { re: f64, im: f64 },

    #[error("curvature is not strictly negative (max K = {k_max})")]
    CurvaturePositive { k_max: f64 },

    #[error("bump at ({re}, {im}) with width {width} reaches past the word-length-2 orbit")]
    OrbitTruncated { re: f64, im: f64, width: f64 },

    #[error("geodesic step failed: speed correction {correction:e} exceeds 1e-3 (dt too large)")]
    StepFailure { correction: f64 },

    #[error("Riccati solution left the admissible band: w = {value} at t = {time}")]
    RiccatiBlowup { value: f64, time: f64 },

    #[error("flow step {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("negative input {value} at index {index}")]
    NegativeInput { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
