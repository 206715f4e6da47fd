use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum GneError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed ({assumption}): {evidence}")]
    Validation { assumption: String, evidence: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("prox evaluation failed for agent {agent}: {reason}")]
    ProxFailure { agent: usize, reason: String },

    #[error("step size violation: {0}")]
    StepSizeViolation(String),

    #[error("constraints are not affine (agent {agent})")]
    NotAffine { agent: usize },

    #[error("pfb step sizes need a cocoercivity modulus for F")]
    MissingCocoercivity,

    #[error("lipschitz estimation did not converge: {0}")]
    EstimationDiverged(String),

    #[error("iterates diverged at k = {k} (norm {norm:e})")]
    Diverged { k: usize, norm: f64 },

    #[error("no sampled point at distance >= {r} from the fixed-point set")]
    EmptySlice { r: f64 },

    #[error("beta = {beta} outside (0, {upper})")]
    BetaOutOfRange { beta: f64, upper: f64 },

    #[error("alpha = {0} must be below 1/2; raise K")]
    AlphaTooLarge(f64),

    #[error("instance at t = {t} is invalid: {source}")]
    InstanceValidation {
        t: usize,
        #[source]
        source: Box<GneError>,
    },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("dimension {0} too large for exhaustive enumeration (max 8)")]
    DimensionTooLarge(usize),

    #[error("F is not strongly monotone (min eigenvalue of sym(M) = {0:e})")]
    NotStronglyMonotone(f64),

    #[error("profile mismatch: {0}")]
    ProfileMismatch(String),

    #[error("bus {0} is islanded")]
    IslandedBus(usize),

    #[error("day-ahead plan missing: {0}")]
    PlanMissing(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("agent {agent} read block of non-neighbour {block}")]
    LocalityViolation { agent: usize, block: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GneError {
    pub fn validation(assumption: impl Into<String>, evidence: impl Into<String>) -> Self {
        GneError::Validation {
            assumption: assumption.into(),
            evidence: evidence.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            GneError::Parse(_) => "ParseError",
            GneError::Validation { .. } => "ValidationError",
            GneError::DimensionMismatch { .. } => "DimensionMismatch",
            GneError::ProxFailure { .. } => "ProxFailure",
            GneError::StepSizeViolation(_) => "StepSizeViolation",
            GneError::NotAffine { .. } => "NotAffine",
            GneError::MissingCocoercivity => "MissingCocoercivity",
            GneError::EstimationDiverged(_) => "EstimationDiverged",
            GneError::Diverged { .. } => "Diverged",
            GneError::EmptySlice { .. } => "EmptySlice",
            GneError::BetaOutOfRange { .. } => "BetaOutOfRange",
            GneError::AlphaTooLarge(_) => "AlphaTooLarge",
            GneError::InstanceValidation { .. } => "InstanceValidationError",
            GneError::OracleUnavailable(_) => "OracleUnavailable",
            GneError::DimensionTooLarge(_) => "DimensionTooLarge",
            GneError::NotStronglyMonotone(_) => "NotStronglyMonotone",
            GneError::ProfileMismatch(_) => "ProfileMismatch",
            GneError::IslandedBus(_) => "IslandedBus",
            GneError::PlanMissing(_) => "PlanMissing",
            GneError::InvalidSchedule(_) => "InvalidSchedule",
            GneError::LocalityViolation { .. } => "LocalityViolation",
            GneError::Io(_) => "IoError",
        }
    }
}

impl From<serde_json::Error> for GneError {
    fn from(e: serde_json::Error) -> Self {
        GneError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GneError>;
