use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, used to tag failures that bubble out of [`crate::pipeline`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    LowFidelityMap,
    VariationalPrior,
    Hmc,
    Prediction,
    ActiveLearning,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Data => "data",
            Stage::LowFidelityMap => "lowfi-map",
            Stage::VariationalPrior => "vi-prior",
            Stage::Hmc => "hmc",
            Stage::Prediction => "prediction",
            Stage::ActiveLearning => "active-learning",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("prior scale left [1e-3, 1e3] at step {step}: sigma = {sigma}")]
    SigmaOutOfRange { step: usize, sigma: f64 },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn non_finite(term: impl Into<String>) -> Self {
        Error::NonFinite { term: term.into() }
    }

    /// Stage that produced this error, if it was tagged.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn in_stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
