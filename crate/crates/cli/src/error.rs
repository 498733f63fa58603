use omnifield::config::ConfigError;
use omnifield::container::ContainerError;
use omnifield::data::DataError;
use omnifield::eval::EvalError;
use omnifield::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// Stable machine-readable category printed as `error[category]`.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Container(ContainerError::Exists(_)) => "exists",
            CliError::Container(ContainerError::Io { .. }) => "io",
            CliError::Container(_) => "container",
            CliError::Data(_) => "data",
            CliError::Train(TrainError::NonFinite { .. }) => "non_finite",
            CliError::Train(_) => "train",
            CliError::Eval(EvalError::Train(e)) if matches!(**e, TrainError::NonFinite { .. }) => "non_finite",
            CliError::Eval(_) => "eval",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.to_string();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
