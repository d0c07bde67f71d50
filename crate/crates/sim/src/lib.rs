//! Time-slotted simulator: builds or ingests a trace, trains every technique
//! on the leading weeks, plays them slot by slot over the remaining weeks and
//! writes per-slot records and summaries.

pub mod compare;
pub mod config;
pub mod data;
pub mod run;
pub mod seeds;

use ono_core::OnoError;
use thiserror::Error;

pub use compare::{compare, render_table, Comparison, ComparisonRow};
pub use config::{ScenarioConfig, TechniqueSpec, TraceSource};
pub use data::{load_inputs, Inputs};
pub use run::{run_scenario, run_with_inputs, train_techniques, Incident, ScenarioRun};
pub use seeds::{derive_seed, Seeds};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{count} of {total} technique slots fell back to the uniform policy (limit {limit})")]
    Incidents { count: usize, total: usize, limit: usize },
    #[error("reports cover different traces (digest {0} vs {1})")]
    DigestMismatch(String, String),
    #[error(transparent)]
    Core(OnoError),
}

impl From<OnoError> for SimError {
    fn from(e: OnoError) -> Self {
        match e {
            OnoError::Config(m) => SimError::Config(m),
            other => SimError::Core(other),
        }
    }
}

impl SimError {
    /// Process exit status: 2 for configuration problems, 3 when the
    /// incident threshold is exceeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::DigestMismatch(..) => 2,
            SimError::Incidents { .. } => 3,
            SimError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
