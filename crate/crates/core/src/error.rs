use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("kernel evaluated on the light cone (r = {r:e}, c|tau| = {ct:e}); use the time-integrated form")]
    LightCone { r: f64, ct: f64 },
    #[error("divergent coincident correlation: {0}")]
    Divergence(String),
    #[error("perturbative regime violated: |gamma| = {0}")]
    Perturbativity(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("regularization required: {0}")]
    RegularizationRequired(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("step size too large: {0}")]
    StepSize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn ensure_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive and finite, got {v}")))
    }
}
