use thiserror::Error;

/// Errors raised by the analytic model, statistics, optimizer and calibration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is outside its valid domain ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("loop series diverges: tl * t24 * theta = {0} (must be below 1 - 1e-9)")]
    DivergentSeries(f64),

    #[error("degenerate device: total transmission is zero")]
    DegenerateDevice,

    #[error("channel ratio undefined: channel {0} has zero probability")]
    UndefinedRatio(usize),

    #[error("multi-photon content undefined: no non-vacuum events")]
    UndefinedContent,

    #[error("mean photon number is infinite (non-vacuum probability is 1)")]
    InfiniteMean,

    #[error("entropy is flat over the ratio grid; no maximum exists")]
    NoMaximum,

    #[error("inconsistent measurement: estimated {name} = {value} lies outside [0, 1]")]
    InconsistentMeasurement { name: &'static str, value: f64 },

    #[error("model domain violated: {0}")]
    ModelDomain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("herald never accepts (acceptance rate is zero)")]
    NoAcceptance,

    #[error("invalid photon source: {0}")]
    InvalidSource(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be positive",
        })
    }
}
