use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error(transparent)]
    Model(#[from] mvtd_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 io, 2 configuration, 3 the instance is outside
    /// the regime the theory covers, 4 a verification suite failed.
    pub fn exit_code(&self) -> i32 {
        use mvtd_core::Error as E;
        match self {
            Self::Io { .. } => 1,
            Self::Parse { .. } | Self::ConstraintViolation(_) => 2,
            Self::Model(e) => match e {
                E::NotPositive { .. }
                | E::StepSizeTooLarge { .. }
                | E::NotIrreducible { .. }
                | E::SingularSystem(_)
                | E::RankDeficient { .. }
                | E::CriticDiverged { .. }
                | E::InvalidMixingConstants(_) => 3,
                E::FileParse(_) => 1,
                _ => 2,
            },
            Self::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
