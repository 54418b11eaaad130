use std::collections::{BTreeMap, HashMap};

use super::Job;
use crate::engine::{Engine, EvalOutcome, ExecutorMode, WorkerHandle};
use crate::trace::{DefinitionRecord, EvalStatus, SolutionRecord, WorkloadRecord};

/// Executes one job attempt. Implementations must always produce an outcome;
/// problems that no retry can fix become failure records.
pub trait JobRunner: Sync {
    fn run(&self, job: &Job, worker: &WorkerHandle, mode: ExecutorMode) -> EvalOutcome;
}

/// Runs jobs through an [`Engine`] using records it owns.
pub struct EngineRunner<'a> {
    engine: &'a Engine,
    definitions: BTreeMap<String, DefinitionRecord>,
    workloads: HashMap<(String, String), WorkloadRecord>,
    solutions: BTreeMap<String, SolutionRecord>,
}

impl<'a> EngineRunner<'a> {
    pub fn new(engine: &'a Engine) -> Self {
        EngineRunner {
            engine,
            definitions: BTreeMap::new(),
            workloads: HashMap::new(),
            solutions: BTreeMap::new(),
        }
    }

    pub fn add_definition(&mut self, d: DefinitionRecord) {
        self.definitions.insert(d.name.clone(), d);
    }

    pub fn add_workload(&mut self, definition: &str, w: WorkloadRecord) {
        self.workloads.insert((definition.to_string(), w.uuid.clone()), w);
    }

    pub fn add_solution(&mut self, s: SolutionRecord) {
        self.solutions.insert(s.name.clone(), s);
    }

    pub fn solution(&self, name: &str) -> Option<&SolutionRecord> {
        self.solutions.get(name)
    }
}

impl JobRunner for EngineRunner<'_> {
    fn run(&self, job: &Job, worker: &WorkerHandle, mode: ExecutorMode) -> EvalOutcome {
        let d = self.definitions.get(&job.definition);
        let w = self.workloads.get(&(job.definition.clone(), job.workload.clone()));
        let s = self.solutions.get(&job.solution);
        let (Some(d), Some(w), Some(s)) = (d, w, s) else {
            return self.engine.failure_outcome(
                worker,
                mode,
                EvalStatus::FailedRuntime,
                format!("job {} refers to records the runner does not hold", job.index),
            );
        };
        match self.engine.run_evaluation(d, w, s, worker, mode) {
            Ok(o) => o,
            Err(e) => self.engine.failure_outcome(worker, mode, EvalStatus::FailedRuntime, e.to_string()),
        }
    }
}
