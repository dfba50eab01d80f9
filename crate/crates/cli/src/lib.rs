//! Experiment runner behind the `qflow` binary.

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::Experiment;

/// Failures of a CLI invocation, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] qflow::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Run(qflow::Error::DimensionLimit(_)) => 3,
            Self::Run(_) | Self::Io(_) => 1,
        }
    }
}
