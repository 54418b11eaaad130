//! Multi-worker evaluation scheduling.

pub mod cost;
pub mod hungarian;
mod runner;
mod scheduler;

use std::time::Duration;

use thiserror::Error;

use crate::engine::ExecutorMode;

pub use cost::{build_cost_matrix, CostMatrix, CostModel, Discounts, WorkerView, DEFAULT_ALPHA, DEFAULT_COST_MS};
pub use hungarian::{assignment_cost, solve, solve_canonical};
pub use runner::{EngineRunner, JobRunner};
pub use scheduler::{hungarian_assign, Assignment, AttemptLog, Fault, ScheduleReport, ScheduledEval, Scheduler, SchedulerStalled};

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("invalid scheduler configuration: {0}")]
    InvalidConfig(String),
    #[error("observed cost {0} must be positive and finite")]
    InvalidObservation(f64),
}

/// One solution × workload evaluation to perform.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    /// Position in the submitted job list.
    pub index: usize,
    pub definition: String,
    pub workload: String,
    pub solution: String,
    /// Solution content hash, matched against worker bootstrap caches.
    pub cache_key: String,
    /// Executions performed so far.
    pub attempts: u32,
    /// Retryable failures seen in persistent mode.
    pub persistent_failures: u32,
    pub mode_override: Option<ExecutorMode>,
    /// Worker that must take the next attempt (the spare that replaced a dead one).
    pub pinned: Option<String>,
}

impl Job {
    pub fn new(index: usize, definition: impl Into<String>, workload: impl Into<String>, solution: impl Into<String>, cache_key: impl Into<String>) -> Self {
        Job {
            index,
            definition: definition.into(),
            workload: workload.into(),
            solution: solution.into(),
            cache_key: cache_key.into(),
            attempts: 0,
            persistent_failures: 0,
            mode_override: None,
            pinned: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub mode: ExecutorMode,
    pub discounts: Discounts,
    /// Jobs per round; `None` means one per live worker.
    pub micro_batch: Option<usize>,
    /// Persistent-mode failures before a job is moved to isolated mode.
    pub defer_after: u32,
    pub max_retries: u32,
    /// Replacement workers that may be brought in over the whole run.
    pub spare_budget: usize,
    pub health_timeout: Duration,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            mode: ExecutorMode::Persistent,
            discounts: Discounts::default(),
            micro_batch: None,
            defer_after: 2,
            max_retries: 3,
            spare_budget: 8,
            health_timeout: Duration::from_secs(2),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedError> {
        if self.micro_batch == Some(0) {
            return Err(SchedError::InvalidConfig("micro-batch size must be at least 1".into()));
        }
        if self.defer_after == 0 {
            return Err(SchedError::InvalidConfig("defer threshold must be at least 1".into()));
        }
        for (name, g) in [("cache", self.discounts.cache), ("resident", self.discounts.resident)] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(SchedError::InvalidConfig(format!("{name} discount {g} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}
