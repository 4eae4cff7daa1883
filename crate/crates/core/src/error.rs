use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical overflow at step {step}{}", member.map(|m| format!(" (member {m})")).unwrap_or_default())]
    NumericalOverflow { step: usize, member: Option<usize> },

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure in {context} (condition estimate {condition:e})")]
    NumericalFailure { context: String, condition: f64 },

    #[error("symmetry violation: eigenvalue {eigenvalue:e} of the transform matrix")]
    SymmetryViolation { eigenvalue: f64 },

    #[error("inverse transform left imaginary residue {residue:e} (field scale {scale:e})")]
    ImaginaryResidue { residue: f64, scale: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("tuning failed: every one of {cells} grid cells diverged")]
    TuningFailure { cells: usize },

    #[error("I/O: {0}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
