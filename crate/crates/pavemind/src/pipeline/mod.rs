//! End-to-end pipeline: load survey data, forecast, rank routes, train the
//! treatment policy, and cut the plan to budget, writing each stage's
//! artifacts as CSV under the configured output directory.

mod config;
mod run;
mod seed;
mod synth;

pub use config::{parse_config, DqnSection, LstmSection, PipelineConfig};
pub use run::{
    run_pipeline, run_until, PlanSummary, RouteRank, RunReport, Stage, StageReport,
};
pub use seed::stage_seed;
pub use synth::{gen_synthetic, write_synthetic, Synthetic};

use crate::domain::DataError;

/// Anything that can stop a pipeline run. Input and configuration problems
/// exit with 1; failures inside a stage (including writing its artifacts)
/// exit with 2.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {message}")]
    Config { message: String },
    #[error("{path}:{line}: {message}")]
    ConfigSyntax {
        path: String,
        line: usize,
        message: String,
    },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Input(#[from] DataError),
    #[error("input: {message}")]
    BadInput { message: String },
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync + 'static>,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code a front end should use for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. }
            | PipelineError::ConfigSyntax { .. }
            | PipelineError::Io { .. }
            | PipelineError::Input(_)
            | PipelineError::BadInput { .. } => 1,
            PipelineError::Stage { .. } | PipelineError::Write { .. } => 2,
        }
    }

    pub(crate) fn stage<E>(stage: &'static str) -> impl FnOnce(E) -> PipelineError
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        move |source| PipelineError::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
