use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the workbench. Variants are grouped by the module that
/// raises them so CLI messages can be qualified with the originating stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vehicle_model: invalid state ({0})")]
    InvalidState(String),
    #[error("vehicle_model: integration diverged ({0})")]
    Divergence(String),
    #[error("plant_sim: plant diverged at t = {time:.2} s")]
    PlantDivergence { time: f64 },
    #[error("kalman: non-finite evaluation while differentiating coordinate {coordinate}")]
    NonFiniteJacobian { coordinate: usize },
    #[error("kalman: innovation covariance is singular")]
    SingularInnovation,
    #[error("kalman: covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },
    #[error("kalman: filter diverged at step {step} (covariance trace {trace:e})")]
    FilterDivergence { step: usize, trace: f64 },
    #[error("kalman: measurement dimension {got} does not match set {expected}")]
    MeasurementDimension { expected: usize, got: usize },
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("neural: shape mismatch ({0})")]
    Shape(String),
    #[error("neural: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("datapipe: signal of length {len} is too short for filter order {order}")]
    SignalTooShort { len: usize, order: usize },
    #[error("datapipe: split fractions must be non-negative and sum to 1 (got {0})")]
    SplitFractions(f64),
    #[error("datapipe: need at least {needed} manoeuvres to split, got {got}")]
    TooFewManoeuvres { needed: usize, got: usize },
    #[error("evaluation: sequence lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("tuning: parameter `{name}` = {value} outside [{lower}, {upper}]")]
    OutOfBounds { name: String, value: f64, lower: f64, upper: f64 },
    #[error("tuning: {0}")]
    Tuning(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }
}
