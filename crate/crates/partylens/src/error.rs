// SPDX-License-Identifier: MIT OR Apache-2.0

use std::process::ExitCode;

use crate::container::ContainerError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(String),
    #[error("artifact {path} was produced under config {found}, live config is {live}; rerun with --force")]
    HashMismatch { path: String, found: String, live: String },
    #[error("bad artifact {path}: {reason}")]
    BadArtifact { path: String, reason: String },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Core(#[from] partylens_core::Error),
    #[error("invariant gates failed: {0}")]
    Gate(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn bad(path: impl std::fmt::Display, reason: impl std::fmt::Display) -> Self {
        Self::BadArtifact {
            path: path.to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Self::Stage { .. } => e,
            e => Self::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code per failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::MissingArtifact(_) | Self::HashMismatch { .. } | Self::BadArtifact { .. } | Self::Container(_) => 4,
            Self::Core(_) => 5,
            Self::Gate(_) => 6,
            Self::Stage { source, .. } => source.exit_code(),
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::BadArtifact {
            path: "csv".into(),
            reason: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::BadArtifact {
            path: "json".into(),
            reason: e.to_string(),
        }
    }
}
