//! Configuration, orchestration and persistence for the `alch` pipeline:
//! model oracle, deficit series, boundary recovery, CR checks and decay-rate
//! classification, driven by one JSON config and reported as JSON and CSV.

pub mod compare;
pub mod config;
pub mod output;
pub mod run;

pub use compare::{compare_runs, RunDiff};
pub use config::{RunConfig, Stage};
pub use run::{run, Outcome, RunOutput, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("incomparable configs: {0}")]
    Incomparable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
