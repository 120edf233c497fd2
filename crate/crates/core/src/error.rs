use thiserror::Error;

pub type Result<T, E = CnmaError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CnmaError {
    #[error("empty component token in treatment label '{0}'")]
    EmptyToken(String),
    #[error("component '{component}' appears more than once in treatment '{label}'")]
    DuplicateComponent { label: String, component: String },
    #[error("unknown component index {0}")]
    UnknownComponent(usize),
    #[error("unknown treatment '{0}'")]
    UnknownTreatment(String),
    #[error("study '{0}' has fewer than two arms")]
    TooFewArms(String),
    #[error("study '{study}' uses treatment '{treatment}' in more than one arm")]
    DuplicateTreatment { study: String, treatment: String },
    #[error("duplicate study id '{0}'")]
    DuplicateStudy(String),
    #[error("arm in study '{study}' has {events} events out of {total}")]
    EventsExceedTotal { study: String, events: u64, total: u64 },
    #[error("arm in study '{0}' has zero subjects")]
    EmptyArm(String),
    #[error("network has no studies or treatments")]
    EmptyNetwork,
    #[error("network is disconnected into {0} groups of treatments")]
    Disconnected(usize),
    #[error("zero cell in study '{0}'; choose the continuity-0.5 policy to correct it")]
    ZeroCell(String),
    #[error("arm index {index} out of range for a study with {arms} arms")]
    ArmOutOfRange { index: usize, arms: usize },
    #[error("anchor treatment must have exactly one component, got '{0}'")]
    MulticomponentAnchor(String),
    #[error("anchor '{0}' does not appear in the network")]
    UnknownAnchor(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular value decomposition did not converge")]
    SvdNonConvergence,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero standard error for the difference between '{0}' and '{1}'")]
    ZeroStandardError(String, String),
    #[error("log posterior returned NaN")]
    LogPosteriorNaN,
    #[error("log posterior is not finite at the initial state of chain {0}")]
    NonFiniteInit(usize),
    #[error("proposal scale collapsed in block {0}: every proposal rejected for a full adaptation window")]
    ScaleCollapse(usize),
    #[error("zero within-chain variance")]
    ZeroVariance,
    #[error("non-finite linear predictor")]
    NonFiniteLogit,
    #[error("model and data do not match: {0}")]
    ModelMismatch(String),
}
