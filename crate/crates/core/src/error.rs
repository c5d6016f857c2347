use thiserror::Error;

pub type Result<T, E = QnsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QnsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A configuration or parameter bound was violated; `key` names the offending entry.
    #[error("invalid value for `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("vacuum violation at t = {time}: n = {min:e} at node {index} (x = {coordinate:?})")]
    Vacuum {
        time: f64,
        index: usize,
        coordinate: Vec<f64>,
        min: f64,
    },

    #[error("non-finite value in {what} at t = {time}")]
    NonFinite { time: f64, what: String },

    #[error("step rejected at t = {time}: {reason}")]
    StepRejected { time: f64, reason: String },

    #[error("Galerkin mode cap {requested} outside 1..={max}")]
    ModeCapOutOfRange { requested: usize, max: usize },

    #[error("test function does not vanish at the final time t = {time} (|phi| = {value:e})")]
    TestFunctionNotVanishing { time: f64, value: f64 },

    #[error("trajectory too sparse for a balance audit: {0}")]
    SparseTrajectory(String),

    #[error("trajectories are not comparable: {0}")]
    IncompatibleTrajectories(String),

    #[error("run for {label} failed: {reason}")]
    MemberRunFailed { label: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QnsError {
    pub fn param(key: &str, reason: impl Into<String>) -> Self {
        QnsError::InvalidParameter {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors raised while time stepping (vacuum, NaN, rejected step).
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            QnsError::Vacuum { .. }
                | QnsError::NonFinite { .. }
                | QnsError::StepRejected { .. }
                | QnsError::MemberRunFailed { .. }
        )
    }
}
