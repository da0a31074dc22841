use thiserror::Error;

/// Errors raised by the simulator, estimators and planners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A state field became NaN or infinite during integration.
    #[error("non-finite vehicle state at tick {tick}")]
    NonFiniteState { tick: u64 },
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("bias window holds {got} samples, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("degenerate identification data: {0}")]
    DegenerateData(String),
    #[error("virtual stiffness along the requested axis is zero")]
    ZeroStiffness,
    #[error("trajectory constraint system is singular: {0}")]
    SolverSingular(String),
    #[error("trajectory limits not met after {0} time scalings")]
    LimitUnreachable(usize),
    #[error("invalid inspection pose: {0}")]
    InvalidPose(String),
    #[error("couplant dispensed while the probe is not attached")]
    CouplantWithoutContact,
    #[error("mission never latched contact")]
    NoContactPhase,
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
