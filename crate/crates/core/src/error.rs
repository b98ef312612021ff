use thiserror::Error;

use crate::netlist::ParseError;

/// Errors raised by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Netlist(#[from] ParseError),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("netlist has no field element")]
    NoFieldElement,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("structurally singular circuit: {0}")]
    StructurallySingular(String),

    #[error("newton iteration failed at step {step} (residual {residual:.3e})")]
    NewtonFailed { step: usize, residual: f64 },

    #[error("singular linear system at step {step}")]
    SingularMatrix { step: usize },

    #[error("time {t} outside waveform span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("inconsistent initial state: {0}")]
    InconsistentStart(String),

    #[error("not enough iterations to estimate a contraction rate")]
    InsufficientIterations,

    #[error("window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
