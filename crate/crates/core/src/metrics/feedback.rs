use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::Serialize;
use thiserror::Error;

use crate::engine::{solution_hash, Engine};
use crate::sched::{CostModel, EngineRunner, Job, Scheduler, SchedulerConfig};
use crate::trace::{
    parse_solution, serialize_definition, DefinitionRecord, EvalStatus, EvaluationRecord, SolutionRecord, TraceError,
    WorkloadRecord,
};
use crate::engine::WorkerHandle;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider has no candidate for iteration {0}")]
    Exhausted(usize),
    #[error("reading candidate: {0}")]
    Io(#[from] std::io::Error),
    #[error("candidate document is invalid: {0}")]
    Invalid(#[from] TraceError),
    #[error("provider command failed: {0}")]
    Command(String),
}

/// Produces the next candidate given what earlier candidates achieved.
pub trait SolutionProvider {
    fn next(&mut self, iteration: usize, d: &DefinitionRecord, history: &[IterationSummary]) -> Result<SolutionRecord, ProviderError>;
}

/// Yields the `*.json` solution documents of a directory in file-name order.
pub struct DirectoryProvider {
    files: Vec<PathBuf>,
}

impl DirectoryProvider {
    pub fn new(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        Ok(DirectoryProvider { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl SolutionProvider for DirectoryProvider {
    fn next(&mut self, iteration: usize, _: &DefinitionRecord, _: &[IterationSummary]) -> Result<SolutionRecord, ProviderError> {
        let path = self.files.get(iteration).ok_or(ProviderError::Exhausted(iteration))?;
        Ok(parse_solution(&std::fs::read_to_string(path)?)?)
    }
}

/// Runs an external program per iteration. It receives
/// `{"iteration", "definition", "history"}` as JSON on stdin and must print a
/// solution document on stdout.
pub struct CommandProvider {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandProvider {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandProvider {
            program: program.into(),
            args,
        }
    }
}

impl SolutionProvider for CommandProvider {
    fn next(&mut self, iteration: usize, d: &DefinitionRecord, history: &[IterationSummary]) -> Result<SolutionRecord, ProviderError> {
        let definition: serde_json::Value =
            serde_json::from_str(&serialize_definition(d)).expect("serialized definition is JSON");
        let request = serde_json::json!({
            "iteration": iteration,
            "definition": definition,
            "history": history,
        });
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let body = request.to_string();
        // Write on a helper thread so a provider that prints early cannot deadlock us.
        let writer = std::thread::spawn(move || stdin.write_all(body.as_bytes()));
        let out = child.wait_with_output()?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(ProviderError::Command(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(parse_solution(&String::from_utf8_lossy(&out.stdout))?)
    }
}

/// Evaluates one candidate on every workload, one record per workload in order.
pub trait Benchmarker {
    fn benchmark(&mut self, d: &DefinitionRecord, workloads: &[WorkloadRecord], s: &SolutionRecord) -> Vec<EvaluationRecord>;
}

/// Benchmarks through the scheduler on a fixed worker set.
pub struct EngineBenchmarker<'a> {
    engine: &'a Engine,
    scheduler: Scheduler,
}

impl<'a> EngineBenchmarker<'a> {
    pub fn new(engine: &'a Engine, cfg: SchedulerConfig, workers: Vec<WorkerHandle>) -> Result<Self, crate::sched::SchedError> {
        Ok(EngineBenchmarker {
            engine,
            scheduler: Scheduler::new(cfg, workers, CostModel::default())?,
        })
    }
}

impl Benchmarker for EngineBenchmarker<'_> {
    fn benchmark(&mut self, d: &DefinitionRecord, workloads: &[WorkloadRecord], s: &SolutionRecord) -> Vec<EvaluationRecord> {
        let mut runner = EngineRunner::new(self.engine);
        runner.add_definition(d.clone());
        runner.add_solution(s.clone());
        let hash = solution_hash(s);
        let jobs: Vec<Job> = workloads
            .iter()
            .enumerate()
            .map(|(i, w)| {
                runner.add_workload(&d.name, w.clone());
                Job::new(i, &d.name, &w.uuid, &s.name, &hash)
            })
            .collect();
        let mut out: Vec<Option<EvaluationRecord>> = vec![None; workloads.len()];
        match self.scheduler.run(jobs, &runner) {
            Ok(report) => {
                for r in report.records {
                    out[r.job.index] = Some(r.outcome.record);
                }
            }
            Err(stalled) => {
                for r in stalled.report.records {
                    out[r.job.index] = Some(r.outcome.record);
                }
            }
        }
        let lost = |_| {
            let worker = WorkerHandle::new("none");
            self.engine
                .failure_outcome(&worker, self.engine.config().mode, EvalStatus::FailedRuntime, "no live workers".into())
                .record
        };
        out.into_iter().enumerate().map(|(i, r)| r.unwrap_or_else(|| lost(i))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadOutcome {
    pub workload: String,
    pub status: EvalStatus,
    pub speedup: Option<f64>,
    pub max_absolute_error: Option<f64>,
    /// First log line, if any.
    pub note: String,
}

/// What the provider sees about one past iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub solution: String,
    pub passed_all: bool,
    pub mean_speedup: Option<f64>,
    pub workloads: Vec<WorkloadOutcome>,
}

impl IterationSummary {
    pub fn digest(&self) -> String {
        let mut s = format!("#{} {}: ", self.iteration, self.solution);
        match self.mean_speedup {
            Some(m) if self.passed_all => s.push_str(&format!("passed, mean speedup {m:.3}")),
            _ => {
                let failed: Vec<String> = self
                    .workloads
                    .iter()
                    .filter(|w| w.status != EvalStatus::Passed)
                    .map(|w| format!("{} {}", w.workload, w.status))
                    .collect();
                s.push_str(&format!("failed on {}", failed.join(", ")));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Extra workloads a candidate must also pass; their results are not fed back.
    pub hidden_workloads: Vec<WorkloadRecord>,
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub iteration: usize,
    pub solution: SolutionRecord,
    pub records: Vec<(WorkloadRecord, EvaluationRecord)>,
    pub mean_speedup: f64,
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub best: Candidate,
    pub candidates: Vec<Candidate>,
    pub history: Vec<IterationSummary>,
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("no candidate passed every workload\n{digest}")]
    NoPassingSolution { digest: String, history: Vec<IterationSummary> },
    #[error("iteration {iteration}: {source}")]
    Provider {
        iteration: usize,
        #[source]
        source: ProviderError,
    },
    #[error("feedback loop needs at least one iteration and one workload")]
    InvalidConfig,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Benchmarks `iterations` candidates and returns the one with the highest
/// mean speedup among those passing every workload. Earlier iterations win ties.
pub fn run_feedback_loop(
    provider: &mut dyn SolutionProvider,
    bench: &mut dyn Benchmarker,
    d: &DefinitionRecord,
    workloads: &[WorkloadRecord],
    iterations: usize,
    opts: &LoopOptions,
) -> Result<LoopResult, LoopError> {
    if iterations == 0 || workloads.is_empty() {
        return Err(LoopError::InvalidConfig);
    }
    let mut history: Vec<IterationSummary> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for i in 0..iterations {
        let s = provider
            .next(i, d, &history)
            .map_err(|source| LoopError::Provider { iteration: i, source })?;
        let records = bench.benchmark(d, workloads, &s);
        let passed_all = records.iter().all(|r| r.status == EvalStatus::Passed);
        let speedups: Vec<f64> = records.iter().filter_map(EvaluationRecord::speedup).collect();
        let mean_speedup = (passed_all && !speedups.is_empty()).then(|| mean(&speedups));
        let summary = IterationSummary {
            iteration: i,
            solution: s.name.clone(),
            passed_all,
            mean_speedup,
            workloads: workloads
                .iter()
                .zip(&records)
                .map(|(w, r)| WorkloadOutcome {
                    workload: w.uuid.clone(),
                    status: r.status,
                    speedup: r.speedup(),
                    max_absolute_error: r.correctness.as_ref().map(|c| c.max_absolute_error),
                    note: r.log.lines().next().unwrap_or_default().to_string(),
                })
                .collect(),
        };
        log::info!("{}", summary.digest());
        history.push(summary);
        let Some(mean_speedup) = mean_speedup.filter(|m| m.is_finite()) else {
            continue;
        };
        let hidden_ok = opts.hidden_workloads.is_empty()
            || bench
                .benchmark(d, &opts.hidden_workloads, &s)
                .iter()
                .all(|r| r.status == EvalStatus::Passed);
        if hidden_ok {
            candidates.push(Candidate {
                iteration: i,
                solution: s,
                records: workloads.iter().cloned().zip(records).collect(),
                mean_speedup,
            });
        }
    }
    let mut best: Option<&Candidate> = None;
    for c in &candidates {
        if best.is_none_or(|b| c.mean_speedup > b.mean_speedup) {
            best = Some(c);
        }
    }
    match best {
        Some(b) => Ok(LoopResult {
            best: b.clone(),
            candidates: candidates.clone(),
            history,
        }),
        None => Err(LoopError::NoPassingSolution {
            digest: history.iter().map(IterationSummary::digest).collect::<Vec<_>>().join("\n"),
            history,
        }),
    }
}
