use thiserror::Error;

/// Errors raised by the design chain, the simulator and the config loader.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("graph not leader-connected: lambda_min(L + B) = {0:.6e}")]
    NotLeaderConnected(f64),

    #[error("design infeasible for (c1 = {c1}, c3 = {c3}): {reason}")]
    DesignInfeasible { c1: f64, c3: f64, reason: String },

    #[error("pinning-gain condition violated: c0 * lambda_min = {product:.4} < 1")]
    PinningCondition { product: f64 },

    #[error("c2 too small / P too large: c_alpha1 = {0:.6} <= 0")]
    DecayRate(f64),

    #[error("ON/OFF schedule not certified: min Lambda = {lambda:.4e} <= 0")]
    ScheduleInfeasible { lambda: f64 },

    #[error("step larger than correlation time: dt = {dt}, t_c = {tc}")]
    StepTooLarge { dt: f64, tc: f64 },

    #[error("time {t} outside schedule horizon [0, {horizon})")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("divergence at t = {t}: {what}")]
    Divergence { t: f64, what: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

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

impl Error {
    /// True for errors meaning "no admissible design or schedule exists".
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::NotLeaderConnected(_)
                | Error::DesignInfeasible { .. }
                | Error::PinningCondition { .. }
                | Error::DecayRate(_)
                | Error::ScheduleInfeasible { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
