use thiserror::Error;

#[derive(Debug, Error)]
pub enum KfpError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("nodal moment field has imaginary residue {residue:e} (limit {limit:e})")]
    ComplexMoment { residue: f64, limit: f64 },

    #[error("solver blow-up at step {step}: |y|_Y = {norm:e} exceeds {limit:e}")]
    BlowUp { step: usize, norm: f64, limit: f64 },

    #[error("forward states were not stored for the adjoint sweep")]
    MissingForwardStates,

    #[error("initial perturbation makes the density negative (min 1+y = {min:e})")]
    NegativeDensity { min: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed coefficient dump: {0}")]
    BadDump(String),
}

pub type Result<T, E = KfpError> = std::result::Result<T, E>;
