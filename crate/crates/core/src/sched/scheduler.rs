use std::collections::VecDeque;
use std::fmt;

use log::{debug, info, warn};

use super::cost::{build_cost_matrix, CostMatrix, CostModel, WorkerView};
use super::hungarian::solve_canonical;
use super::{Job, JobRunner, SchedError, SchedulerConfig};
use crate::engine::{EvalOutcome, ExecutorMode, WorkerHandle};
use crate::trace::EvalStatus;

/// Real job → worker pairs of one solved matrix, by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    /// Total over real cells only.
    pub cost: f64,
}

/// Minimum-cost assignment of a padded matrix; padded cells are dropped.
pub fn hungarian_assign(m: &CostMatrix) -> Assignment {
    let cols = solve_canonical(&m.cells);
    let pairs: Vec<(usize, usize)> = cols
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| m.is_real(r, c))
        .collect();
    let cost = pairs.iter().map(|&(r, c)| m.cells[r][c]).sum();
    Assignment { pairs, cost }
}

/// Scripted failure: the named worker dies at its next request in `round`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub round: usize,
    pub worker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptLog {
    pub round: usize,
    pub job: usize,
    pub attempt: u32,
    pub worker: String,
    pub mode: ExecutorMode,
    pub status: EvalStatus,
    pub retryable: bool,
    pub worker_fault: bool,
}

/// The final result of one job.
#[derive(Debug, Clone)]
pub struct ScheduledEval {
    pub job: Job,
    pub worker: String,
    pub outcome: EvalOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct ScheduleReport {
    pub records: Vec<ScheduledEval>,
    pub attempts: Vec<AttemptLog>,
    pub rounds: usize,
    /// `(dead worker, replacement)` in order of replacement.
    pub replacements: Vec<(String, String)>,
}

impl ScheduleReport {
    /// Attempts that ran in isolated mode, as `(job, attempt)`.
    pub fn isolated_attempts(&self) -> Vec<(usize, u32)> {
        self.attempts
            .iter()
            .filter(|a| a.mode == ExecutorMode::Isolated)
            .map(|a| (a.job, a.attempt))
            .collect()
    }
}

#[derive(Debug)]
pub struct SchedulerStalled {
    pub pending: Vec<Job>,
    pub report: ScheduleReport,
}

impl fmt::Display for SchedulerStalled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scheduler stalled: no live workers remain, {} job(s) pending",
            self.pending.len()
        )
    }
}

impl std::error::Error for SchedulerStalled {}

pub struct Scheduler {
    cfg: SchedulerConfig,
    cost: CostModel,
    workers: Vec<WorkerHandle>,
    spares_used: usize,
    faults: Vec<Fault>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig, workers: Vec<WorkerHandle>, cost: CostModel) -> Result<Self, SchedError> {
        cfg.validate()?;
        if workers.is_empty() {
            return Err(SchedError::InvalidConfig("at least one worker is required".into()));
        }
        Ok(Scheduler {
            cfg,
            cost,
            workers,
            spares_used: 0,
            faults: Vec::new(),
        })
    }

    pub fn with_faults(mut self, faults: Vec<Fault>) -> Self {
        self.faults = faults;
        self
    }

    pub fn workers(&self) -> &[WorkerHandle] {
        &self.workers
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn run(&mut self, jobs: Vec<Job>, runner: &dyn JobRunner) -> Result<ScheduleReport, SchedulerStalled> {
        self.run_with(jobs, runner, &mut |_| {})
    }

    /// Runs every job to a final record, handing each to `sink` as it completes.
    pub fn run_with(
        &mut self,
        jobs: Vec<Job>,
        runner: &dyn JobRunner,
        sink: &mut dyn FnMut(&ScheduledEval),
    ) -> Result<ScheduleReport, SchedulerStalled> {
        let mut queue: VecDeque<Job> = jobs.into();
        let mut report = ScheduleReport::default();
        let mut round = 0;
        while !queue.is_empty() {
            self.heal(&mut report);
            let live: Vec<usize> = (0..self.workers.len()).filter(|&i| !self.workers[i].is_dead()).collect();
            if live.is_empty() {
                warn!("no live workers with {} job(s) pending", queue.len());
                report.rounds = round;
                return Err(SchedulerStalled {
                    pending: queue.into(),
                    report,
                });
            }
            let size = self.cfg.micro_batch.unwrap_or(live.len()).min(queue.len());
            let mut batch: Vec<Job> = queue.drain(..size).collect();
            let pairs = self.assign(&mut batch, &live);

            for f in self.faults.iter().filter(|f| f.round == round) {
                if let Some(w) = self.workers.iter().find(|w| w.id() == f.worker) {
                    debug!("round {round}: injecting kill on {}", f.worker);
                    w.inject_kill();
                }
            }

            let outcomes = self.dispatch(&batch, &pairs, runner);

            let mut assigned = vec![false; batch.len()];
            let mut retry = Vec::new();
            for ((b, wi), (mode, outcome)) in pairs.iter().copied().zip(outcomes) {
                assigned[b] = true;
                let mut job = batch[b].clone();
                job.attempts += 1;
                let worker_id = self.workers[wi].id().to_string();
                report.attempts.push(AttemptLog {
                    round,
                    job: job.index,
                    attempt: job.attempts,
                    worker: worker_id.clone(),
                    mode,
                    status: outcome.record.status,
                    retryable: outcome.retryable,
                    worker_fault: outcome.worker_fault,
                });
                if outcome.elapsed_ms.is_finite() && outcome.elapsed_ms > 0.0 {
                    let _ = self.cost.update(&job.solution, &worker_id, outcome.elapsed_ms);
                }
                if outcome.retryable && job.attempts <= self.cfg.max_retries {
                    if mode == ExecutorMode::Persistent {
                        job.persistent_failures += 1;
                        if job.persistent_failures >= self.cfg.defer_after {
                            info!("job {} deferred to isolated mode", job.index);
                            job.mode_override = Some(ExecutorMode::Isolated);
                        }
                    }
                    job.pinned = None;
                    if outcome.worker_fault {
                        job.pinned = self.replace(wi, &mut report);
                    }
                    retry.push(job);
                } else {
                    let done = ScheduledEval {
                        job,
                        worker: worker_id,
                        outcome,
                    };
                    sink(&done);
                    report.records.push(done);
                }
            }
            // Retries run first, then jobs the matrix left unassigned, both in order.
            let unassigned: Vec<Job> = batch
                .into_iter()
                .zip(assigned)
                .filter_map(|(j, a)| (!a).then_some(j))
                .collect();
            for job in retry.into_iter().chain(unassigned).rev() {
                queue.push_front(job);
            }
            round += 1;
        }
        report.rounds = round;
        Ok(report)
    }

    /// Pinned jobs take their worker; the rest are matched by the cost matrix.
    /// Returns `(batch position, worker index)` pairs sorted by batch position.
    fn assign(&self, batch: &mut [Job], live: &[usize]) -> Vec<(usize, usize)> {
        let mut free: Vec<usize> = live.to_vec();
        let mut pairs = Vec::new();
        let mut open = Vec::new();
        for (b, job) in batch.iter_mut().enumerate() {
            let pos = job
                .pinned
                .as_ref()
                .and_then(|id| free.iter().position(|&wi| self.workers[wi].id() == id));
            match pos {
                Some(p) => pairs.push((b, free.remove(p))),
                None => {
                    job.pinned = None;
                    open.push(b);
                }
            }
        }
        if !open.is_empty() && !free.is_empty() {
            let views: Vec<WorkerView> = free
                .iter()
                .map(|&wi| {
                    let w = &self.workers[wi];
                    WorkerView {
                        id: w.id().to_string(),
                        warm: w.warm_set(),
                        resident: w.resident_set(),
                    }
                })
                .collect();
            let rows: Vec<&Job> = open.iter().map(|&b| &batch[b]).collect();
            let m = build_cost_matrix(&rows, &views, &self.cost, self.cfg.discounts);
            for (r, c) in hungarian_assign(&m).pairs {
                pairs.push((open[r], free[c]));
            }
        }
        pairs.sort_unstable();
        pairs
    }

    fn dispatch(&self, batch: &[Job], pairs: &[(usize, usize)], runner: &dyn JobRunner) -> Vec<(ExecutorMode, EvalOutcome)> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = pairs
                .iter()
                .map(|&(b, wi)| {
                    let job = &batch[b];
                    let worker = &self.workers[wi];
                    let mode = job.mode_override.unwrap_or(self.cfg.mode);
                    scope.spawn(move || (mode, runner.run(job, worker, mode)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("job runner panicked"))
                .collect()
        })
    }

    /// Health-checks every worker and replaces the dead ones while spares last.
    fn heal(&mut self, report: &mut ScheduleReport) {
        for wi in 0..self.workers.len() {
            if !self.workers[wi].health_check(self.cfg.health_timeout) {
                self.replace(wi, report);
            }
        }
    }

    /// Swaps the dead worker at `wi` for a fresh spare. Returns the spare's id.
    fn replace(&mut self, wi: usize, report: &mut ScheduleReport) -> Option<String> {
        if self.spares_used >= self.cfg.spare_budget {
            warn!("worker {} is dead and the spare budget is spent", self.workers[wi].id());
            return None;
        }
        let spare = WorkerHandle::spare(format!("spare-{}", self.spares_used));
        self.spares_used += 1;
        let id = spare.id().to_string();
        let dead = std::mem::replace(&mut self.workers[wi], spare);
        dead.kill();
        info!("replaced {} with {id}", dead.id());
        report.replacements.push((dead.id().to_string(), id.clone()));
        Some(id)
    }
}
