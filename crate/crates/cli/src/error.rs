use rankef_core::corpus::CorpusError;
use rankef_core::dataset::DatasetError;
use rankef_core::eval::EvalError;
use rankef_core::model::ModelError;
use rankef_core::nn::NnError;
use rankef_core::sandbox::ExecError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check ran and did not pass (gradcheck over tolerance).
    pub const CHECK_FAILED: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const ENVIRONMENT: i32 = 3;
    pub const DIVERGED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or inputs: missing files, malformed records,
    /// vocabulary mismatches.
    #[error("validation error: {0}")]
    Validation(String),
    /// The host cannot run the command: no interpreter, unwritable output.
    #[error("environment error: {0}")]
    Environment(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Environment(_) => exit::ENVIRONMENT,
            CliError::Diverged(_) => exit::DIVERGED,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
        }
    }

    pub(crate) fn io(what: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Environment(format!("{what}: {err}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::InterpreterMissing(_) | ExecError::Io(_) | ExecError::Pool(_) => {
                CliError::Environment(e.to_string())
            }
            ExecError::InvalidLimits(_) | ExecError::UnknownProblem { .. } => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Io(_) => CliError::Environment(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            ModelError::Nn(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
