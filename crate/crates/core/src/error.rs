use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate quaternion")]
    DegenerateQuaternion,

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("level {0} out of range [0, 9]")]
    LevelOutOfRange(u8),

    #[error("feature exceeds tile: {0}")]
    FeatureExceedsTile(String),

    #[error("outside heightfield: ({x:.3}, {y:.3})")]
    OutsideHeightfield { x: f64, y: f64 },

    #[error("time {t:.6} s outside trajectory [0, {duration:.6}] s")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("sensor underground: sensor z {sensor_z:.3} m, surface {surface_z:.3} m")]
    SensorUnderground { sensor_z: f64, surface_z: f64 },

    #[error("time regression: {new_ns} ns is not after {current_ns} ns")]
    TimeRegression { current_ns: u64, new_ns: u64 },

    #[error("propagation step {dt_ms:.3} ms exceeds 50 ms")]
    StepTooLarge { dt_ms: f64 },

    #[error("stale measurement: {age_ms:.3} ms older than state")]
    StaleMeasurement { age_ms: f64 },

    #[error("measurement {ahead_ms:.3} ms ahead of state")]
    MeasurementAhead { ahead_ms: f64 },

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("pose-scan desync: {offset_ms:.3} ms")]
    PoseScanDesync { offset_ms: f64 },

    #[error("edit outside map")]
    EditOutsideMap,

    #[error("too few points: {got} < {required}")]
    TooFewPoints { got: usize, required: usize },

    #[error("degenerate point set")]
    DegeneratePointSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
