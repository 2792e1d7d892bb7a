use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid beta profile: {0}")]
    InvalidProfile(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("jump rate overflow at site {site}: log-rate {log_rate:.1} (window too wide for the state)")]
    RateOverflow { site: i64, log_rate: f64 },
    #[error("weighted norm overflow")]
    NormOverflow,
    #[error("C_lambda = {c_lambda} != C_mu = {c_mu}: there are no fixed points")]
    NotMeanReverting { c_lambda: f64, c_mu: f64 },
    #[error("C_lambda = {c_lambda} != C_mu = {c_mu}: there are no fixed points")]
    NoFixedPoint { c_lambda: f64, c_mu: f64 },
    #[error("window too narrow: off-window mass {off_window_mass:e}")]
    WindowTooNarrow { off_window_mass: f64 },
    #[error("step size underflow at t = {t}: dt = {dt:e}")]
    StepSizeUnderflow { t: f64, dt: f64 },
    #[error("explicit step unstable: dt * max exit rate = {product:.3e} >= 0.5")]
    UnstableStep { product: f64 },
    #[error("L or M left the safe range at t = {t} (L = {l}, M = {m}; monitor bounds L <= {l_bound}, M >= {m_bound}): {source}")]
    Explosion {
        t: f64,
        l: f64,
        m: f64,
        l_bound: f64,
        m_bound: f64,
        source: Box<Error>,
    },
    #[error("negative probability {min:e} at t = {t}")]
    NegativeProbability { t: f64, min: f64 },
    #[error("W is only certified at c = 1 (got c = {c})")]
    CNotOne { c: f64 },
    #[error("uniformization overflow: rate * substep = {rate_times_step:.1} > 700")]
    UniformizationOverflow { rate_times_step: f64 },
    #[error("the series route needs a path that is constant on [t0, t1]")]
    NonConstantPath,
    #[error("time {t} outside the path domain [{start}, {end}]")]
    OutsidePath { t: f64, start: f64, end: f64 },
    #[error("dominating rate overflow: {rate:e}")]
    DominatingRateOverflow { rate: f64 },
    #[error("particle step too large: dt * max rate = {product:.3e} >= 0.1")]
    StepTooLarge { product: f64 },
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
