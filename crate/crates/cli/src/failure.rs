//! Error classes and the exit codes they map to.

use std::fmt;
use std::process::ExitCode;

use tts_core::learner::LearnError;
use tts_core::pipeline::PipelineError;
use tts_core::selector::SelectorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Model,
}

impl Kind {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Model => 3,
        })
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Tags an error with its class.
pub trait Classify<T> {
    fn or_kind(self, kind: Kind) -> Outcome<T>;

    fn usage_err(self) -> Outcome<T>
    where
        Self: Sized,
    {
        self.or_kind(Kind::Usage)
    }

    fn data_err(self) -> Outcome<T>
    where
        Self: Sized,
    {
        self.or_kind(Kind::Data)
    }

    fn model_err(self) -> Outcome<T>
    where
        Self: Sized,
    {
        self.or_kind(Kind::Model)
    }
}

impl<T> Classify<T> for anyhow::Result<T> {
    fn or_kind(self, kind: Kind) -> Outcome<T> {
        self.map_err(|error| Failure { kind, error })
    }
}

fn learn_kind(e: &LearnError) -> Kind {
    match e {
        LearnError::FingerprintMismatch { .. } | LearnError::UnsupportedVersion(_) | LearnError::Format(_) => {
            Kind::Model
        }
        LearnError::InvalidConfig(_) | LearnError::EmptyGrid => Kind::Usage,
        _ => Kind::Data,
    }
}

/// Model-artifact problems are model errors, bad settings usage errors,
/// everything else a data error.
pub fn pipeline_kind(e: &PipelineError) -> Kind {
    match e {
        PipelineError::Artifact(_) => Kind::Model,
        PipelineError::Learn(l) | PipelineError::Selector(SelectorError::Learn(l)) => learn_kind(l),
        _ => Kind::Data,
    }
}

pub fn from_pipeline(e: PipelineError, context: &str) -> Failure {
    Failure {
        kind: pipeline_kind(&e),
        error: anyhow::Error::new(e).context(context.to_string()),
    }
}
