use thiserror::Error;

/// Errors raised by the simulator and the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical input fell outside the range where the model is defined.
    #[error("{quantity} = {value} is outside the valid range [{min}, {max}] {unit}")]
    Domain {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
        unit: &'static str,
    },
    /// The model cannot represent the requested regime (e.g. round-trip gain).
    #[error("model error: {0}")]
    Model(String),
    /// The requested target cannot be reached with the given parameters.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("search failed: {0}")]
    Search(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(
        quantity: &'static str,
        value: f64,
        (min, max): (f64, f64),
        unit: &'static str,
    ) -> Self {
        Error::Domain {
            quantity,
            value,
            min,
            max,
            unit,
        }
    }
}
