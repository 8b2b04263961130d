use toolret::corpus::CorpusError;
use toolret::datagen::DatagenError;
use toolret::embed::EmbedError;
use toolret::eval::EvalError;
use toolret::refine::RefineError;
use toolret::retrieve::RetrieveError;
use toolret::train::TrainError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, missing or malformed inputs. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Non-finite loss or values during training or embedding. Exit code 3.
    #[error("{0}")]
    Numerical(String),
    /// An LLM endpoint or other outside service failed. Exit code 4.
    #[error("{0}")]
    External(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::External(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Train(t) => t.into(),
            EmbedError::NumericalError(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RetrieveError> for CliError {
    fn from(e: RetrieveError) -> Self {
        match e {
            RetrieveError::Train(t) => t.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Train(t) => t.into(),
            RefineError::Embed(t) => t.into(),
            RefineError::Retrieve(t) => t.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Transport(_) => CliError::External(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<toolret::artifact::ArtifactError> for CliError {
    fn from(e: toolret::artifact::ArtifactError) -> Self {
        CliError::Validation(e.to_string())
    }
}
