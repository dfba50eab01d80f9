use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported Lindblad term: {0}")]
    UnsupportedTerm(String),

    #[error("generator is not Hermitian: imaginary residue {residue:e} on monomial {monomial}")]
    NonHermitianGenerator { residue: f64, monomial: String },

    #[error("operator has derivative order {0}; only order <= 2 can be evaluated")]
    UnsupportedOrder(usize),

    #[error("every sample was clamped at step {step}; reduce dt")]
    StepTooLarge { step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metric matrix is singular even after least-squares fallback")]
    SingularMetric,

    #[error("Fock cutoff too small: {0}")]
    Cutoff(String),

    #[error("Taylor table does not describe a density matrix: {0}")]
    InconsistentTable(String),

    #[error("grid solver refuses {0} phase-space dimensions (limit is 4)")]
    DimensionLimit(usize),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("exact density vanishes at a sampled point")]
    DegenerateSupport,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
