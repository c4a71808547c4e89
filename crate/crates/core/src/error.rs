use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("variable `{name}` at byte {offset} is out of range for dimension {dimension}")]
    VariableOutOfRange {
        name: String,
        offset: usize,
        dimension: usize,
    },

    #[error("domain error in `{node}`: {reason}")]
    Domain { node: String, reason: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Legendre inversion did not converge (residual {residual:e})")]
    Inversion { residual: f64 },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64, state: Vec<f64> },

    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64, state: Vec<f64> },

    #[error("Jacobi metric degenerates at {point:?}: E - U = {gap:e}")]
    Degeneracy { point: Vec<f64>, gap: f64 },

    #[error("energy mismatch: |H - E| = {0:e}")]
    EnergyMismatch(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no event within t_max = {0}")]
    NoEvent(f64),

    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),

    #[error("singular shooting Jacobian (possible degenerate family): {0}")]
    SingularJacobian(String),

    #[error("seed is not transverse to the section: {0}")]
    Transversality(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("orbit invariant violated: {0}")]
    Invariant(String),

    #[error("ambiguous contact: {0}")]
    Ambiguous(String),

    #[error("tube self-overlap: {0}")]
    TubeOverlap(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gap criterion failed: gap {gap:e} < required {required:e}")]
    GapCriterion { gap: f64, required: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag for structured error artifacts.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "syntax",
            Error::UnknownIdentifier { .. } => "unknown_identifier",
            Error::VariableOutOfRange { .. } => "variable_out_of_range",
            Error::Domain { .. } => "domain",
            Error::Model(_) => "model",
            Error::Singular(_) => "singular",
            Error::Inversion { .. } => "inversion",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::MaxSteps { .. } => "max_steps",
            Error::Degeneracy { .. } => "degeneracy",
            Error::EnergyMismatch(_) => "energy_mismatch",
            Error::Precondition(_) => "precondition",
            Error::NoEvent(_) => "no_event",
            Error::NewtonDivergence(_) => "newton_divergence",
            Error::SingularJacobian(_) => "singular_jacobian",
            Error::Transversality(_) => "transversality",
            Error::Unsupported(_) => "unsupported",
            Error::Invariant(_) => "invariant",
            Error::Ambiguous(_) => "ambiguous",
            Error::TubeOverlap(_) => "tube_overlap",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::GapCriterion { .. } => "gap_criterion",
        }
    }
}
