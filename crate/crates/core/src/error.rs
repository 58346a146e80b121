use thiserror::Error;

use crate::model::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{name}` must be finite and strictly positive, got {value}")]
    InvalidParameter { name: String, value: f64 },

    #[error("inconsistent scaling: {0}")]
    InconsistentScaling(String),

    #[error("state is in the {found:?} frame, expected {expected:?}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid control input: {0}")]
    InvalidControl(String),

    #[error("invalid control schedule: {0}")]
    InvalidSchedule(String),

    #[error("integration step {step} exceeds the smallest schedule interval {interval}")]
    StepTooLarge { step: f64, interval: f64 },

    #[error("integration blew up at t = {time}: {detail}")]
    BlowUp { time: f64, detail: String },

    #[error("adaptive step size underflow at t = {time} (h = {step:e}); the problem looks stiff")]
    StepUnderflow { time: f64, step: f64 },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("nullcline j has a pole at x1 = {x1}")]
    Pole { x1: f64 },

    #[error("invalid scan region: {0}")]
    InvalidRegion(String),

    #[error("trajectory carries no controls, required for the total-treatment objective")]
    MissingControls,

    #[error("trajectory ends at {end}, before the horizon t_f = {t_f}")]
    TrajectoryTooShort { end: f64, t_f: f64 },

    #[error("invalid objective specification: {0}")]
    InvalidSpec(String),

    #[error(
        "terminal constraint infeasible: N(t_f) = {terminal_tumor:e} stays above the tolerance {tolerance:e}; \
         the tumor cannot be eliminated within the horizon, so one of the previous two objective \
         functions must be used instead (final-tumor or average-tumor)"
    )]
    Infeasible { terminal_tumor: f64, tolerance: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("missing configuration key `{0}`")]
    MissingKey(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
