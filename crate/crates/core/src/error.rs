use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("non-monotone timestamp at line {line}")]
    NonMonotoneTime { line: u64 },
    #[error("crossed book at line {line} (best bid >= best ask)")]
    CrossedBook { line: u64 },
    #[error("no pre-trade snapshot for print at {ts_ns} ns")]
    MissingSnapshot { ts_ns: i64 },
    #[error("intensity state is current as of {state_time}, queried at earlier {query_time}")]
    StaleState { state_time: f64, query_time: f64 },
    #[error("time regression: detector at {state_time}, stepped to {step_time}")]
    TimeRegression { state_time: f64, step_time: f64 },
    #[error("unstable parameters: spectral radius {radius} >= 1")]
    UnstableParams { radius: f64 },
    #[error("ground intensity vanished at event time {time} (log of zero)")]
    NonPositiveIntensity { time: f64 },
    #[error("invalid intensity ratio rho = {rho} (must be positive and != 1)")]
    InvalidRho { rho: f64 },
    #[error("scale function derivative queried at kink point x = {x}")]
    KinkPoint { x: f64 },
    #[error("insufficient data: need more than {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },
    #[error("optimizer did not converge within {max_iters} iterations (best log-likelihood {log_likelihood})")]
    Nonconvergence {
        max_iters: usize,
        log_likelihood: f64,
        best: Box<crate::hawkes::HawkesParams>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
