use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model evaluation, envelope construction and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol `{0}` has no assigned value")]
    UnassignedSymbol(String),

    #[error("denominator evaluates to non-positive value {value} at t = {t}")]
    NonPositiveDenominator { value: f64, t: f64 },

    #[error("polynomial is not divisible by state `{state}`")]
    NotDivisible { state: String },

    #[error("right-hand side is non-finite at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("state `{state}` dropped to {value} at t = {t}, below the positivity floor")]
    PositivityFloorBreached { state: String, t: f64, value: f64 },

    #[error("envelope coefficient for `{unc}` on transition {from}->{to} changes sign over the horizon")]
    SignChangingCoefficient { unc: String, from: String, to: String },

    #[error("uncertainty budget {zeta} reaches the denominator minimum {sigma_min}")]
    BoundExceedsDenominator { zeta: f64, sigma_min: f64 },

    #[error("uncertainty `{unc}` assigned {value}, outside its bound {bound}")]
    UncertaintyOutOfBounds { unc: String, value: f64, bound: f64 },

    #[error(
        "envelope rate {from}->{to} can become negative at t = {t} for eps = {eps}; \
         lower the eps cap or the uncertainty bounds"
    )]
    EnvelopeNonnegativityViolated { from: String, to: String, t: f64, eps: f64 },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model JSON parse error: {0}")]
    Json(#[from] serde_json::Error),
}
