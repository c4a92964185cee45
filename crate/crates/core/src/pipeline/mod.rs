//! Three-stage run: gated blueprint generation, social simulation, dataset emission.

mod checkpoint;
mod config;
mod phase1;
mod phase2;
mod stages;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use config::{AgentSource, BackendSet, RunConfig, RunInputs, Targets};
pub use phase1::{Candidate, CapStats, Phase1Runner, Phase1State, Phase1Status};
pub use phase2::{caption_real_images, socialize_blueprints, SocialOutput};
pub use stages::{
    emit, generate, run_all, socialize, tool_versions, GenerateOptions, GenerateReport, BLUEPRINTS_FILE,
    CHECKPOINT_FILE, MANIFEST_FILE, MEMORY_FILE, REFLECTIONS_FILE, SOCIAL_SAMPLES_FILE, TRACE_FILE, TRAJECTORIES_FILE,
};

use crate::actions::ActionError;
use crate::backends::BackendError;
use crate::manifest::ManifestError;
use crate::memory::MemoryError;
use crate::profile::ProfileError;
use crate::social::SocialError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error(
        "iteration cap of {} reached with {}/{} blueprints accepted (acceptance rate {:.4}, tau {})",
        .0.attempts, .0.accepted, .0.target, .0.acceptance_rate, .0.tau
    )]
    IterationCapExceeded(CapStats),
    #[error("checkpoint rejected: {0}")]
    CorruptCheckpoint(String),
    #[error("no blueprints to socialize")]
    NoBlueprints,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Social(#[from] SocialError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// The underlying backend failure, if this error came from a backend call.
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            PipelineError::Backend(e)
            | PipelineError::Profile(ProfileError::BackendFailure(e))
            | PipelineError::Action(ActionError::Backend(e))
            | PipelineError::Action(ActionError::EditFailure { source: e, .. })
            | PipelineError::Memory(MemoryError::BackendFailure(e))
            | PipelineError::Social(SocialError::BackendFailure(e)) => Some(e),
            _ => None,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.backend_error().is_some() {
            3
        } else if matches!(self, PipelineError::IterationCapExceeded(_)) {
            4
        } else {
            2
        }
    }
}
