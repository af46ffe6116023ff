//! Exit-code classification: 1 for bad input or configuration, 2 for
//! failures while running.

use fussi_core::fusion::FusionError;

#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn validation(e: impl Into<anyhow::Error>) -> Self {
        Failure::Validation(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::InvalidConfig(_) => Failure::validation(e),
            _ => Failure::runtime(e),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Tags an error with its stage and exit class.
pub trait ResultExt<T> {
    fn invalid(self, stage: &str) -> CmdResult<T>;
    fn runtime(self, stage: &str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn invalid(self, stage: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Validation(e.into().context(stage.to_string())))
    }

    fn runtime(self, stage: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(stage.to_string())))
    }
}
