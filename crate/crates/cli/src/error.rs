use fblq_core::blocklength::BlocklengthError;
use fblq_core::divergences::DivergenceError;
use fblq_core::hierarchy::HierarchyError;
use fblq_core::linalg::LinalgError;
use fblq_core::one_shot::OneShotError;
use fblq_core::states::StateError;
use fblq_core::tasks::TaskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

// Bad input surfaces through the same error types as solver failures, so
// each conversion decides which side of the exit-code split it lands on.

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotSquare { .. }
            | LinalgError::NonFinite { .. }
            | LinalgError::NotHermitian { .. }
            | LinalgError::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Linalg(inner) => inner.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DivergenceError> for CliError {
    fn from(e: DivergenceError) -> Self {
        match e {
            DivergenceError::Linalg(inner) => inner.into(),
            DivergenceError::State(inner) => inner.into(),
            DivergenceError::LatticeBlowUp(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<OneShotError> for CliError {
    fn from(e: OneShotError) -> Self {
        match e {
            OneShotError::Linalg(inner) => inner.into(),
            OneShotError::State(inner) => inner.into(),
            OneShotError::BadEpsilon(..)
            | OneShotError::NotNormalized(_)
            | OneShotError::DimensionMismatch(..)
            | OneShotError::NotPositive(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::OneShot(inner) => inner.into(),
            TaskError::Linalg(inner) => inner.into(),
            TaskError::State(inner) => inner.into(),
            TaskError::TooLarge { .. }
            | TaskError::BadParameters { .. }
            | TaskError::BadEpsilon(_)
            | TaskError::DomainMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::OneShot(inner) => inner.into(),
            HierarchyError::Divergence(inner) => inner.into(),
            HierarchyError::State(inner) => inner.into(),
            HierarchyError::BadParameters { .. }
            | HierarchyError::UnknownKind(_)
            | HierarchyError::BadDimension(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BlocklengthError> for CliError {
    fn from(e: BlocklengthError) -> Self {
        match e {
            BlocklengthError::Divergence(inner) => inner.into(),
            BlocklengthError::State(inner) => inner.into(),
            BlocklengthError::BadEpsilon(_)
            | BlocklengthError::BadPhaseError(_)
            | BlocklengthError::NotBinary(_)
            | BlocklengthError::BadGrid => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
