use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid task field `{field}`: {reason}")]
    InvalidTask { field: String, reason: String },
    #[error("object spec `{spec}` does not match placement `{placement}`")]
    IdMismatch { spec: String, placement: String },
    #[error("placement references unknown object `{0}`")]
    UnknownObject(String),
    #[error("empty scene graph")]
    EmptyScene,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge transport failed after {attempts} attempt(s): {cause}")]
    Transport { attempts: u32, cause: String },
    #[error("judge returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unparsable judge response ({reason}): {body}")]
    Unparsable { reason: String, body: String },
    #[error("remote judge needs an endpoint")]
    MissingEndpoint,
    #[error("image provider failed: {0}")]
    Render(String),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy failed: {0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("turn {turn}: {source}")]
    Policy {
        turn: usize,
        #[source]
        source: PolicyError,
    },
    #[error("turn {turn}: {source}")]
    Judge {
        turn: usize,
        #[source]
        source: JudgeError,
    },
    #[error("turn {turn}: {source}")]
    Layout {
        turn: usize,
        #[source]
        source: LayoutError,
    },
    #[error("trajectory {index}: {source}")]
    InTrajectory {
        index: usize,
        #[source]
        source: Box<TrajectoryError>,
    },
}

#[derive(Debug, Error)]
pub enum AdvantageError {
    #[error("trajectory {trajectory}, token {token}: missing {what}")]
    MissingLogprob {
        trajectory: usize,
        token: usize,
        what: &'static str,
    },
    #[error("trajectory {trajectory}, turn {turn}: {reason}")]
    TokenData {
        trajectory: usize,
        turn: usize,
        reason: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step}: {source}")]
    Rollout {
        step: usize,
        #[source]
        source: TrajectoryError,
    },
    #[error("step {step}: {source}")]
    Advantage {
        step: usize,
        #[source]
        source: AdvantageError,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
