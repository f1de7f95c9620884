use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TariffError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid reservation utility: {0}")]
    InvalidReservation(String),

    #[error("no sign change for root search on [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("assumption `{condition}` fails on x in [{lo}, {hi}]")]
    AssumptionViolation { condition: String, lo: f64, hi: f64 },

    #[error("no feasible boundary pair; corner candidates {candidates:?}")]
    InfeasibleSet { candidates: Vec<(f64, f64)> },

    #[error("agent with type {x} does not participate (zero marginal price)")]
    NonParticipating { x: f64 },

    #[error("unbounded best response at type {x}")]
    Unbounded { x: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TariffError>;

impl From<std::io::Error> for TariffError {
    fn from(e: std::io::Error) -> Self {
        TariffError::Io(e.to_string())
    }
}

impl From<csv::Error> for TariffError {
    fn from(e: csv::Error) -> Self {
        TariffError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for TariffError {
    fn from(e: serde_json::Error) -> Self {
        TariffError::Config(e.to_string())
    }
}
