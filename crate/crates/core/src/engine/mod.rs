//! Out-of-process execution, timing and evaluation of solutions.

mod frame;
mod process;
mod stage;
mod worker;

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use frame::{
    decode_result, decode_run, encode_run, read_frame, write_frame, Frame, FrameError, FrameType, HostHello,
    PluginHello, RunTrailer, MAX_FRAME_LEN, PROTOCOL_VERSION,
};
pub use process::{tensor_digest, ExecFailure, FrameLog, PluginProcess, SentFrame};
pub use stage::{solution_hash, Launchers, StagedSolution, Stager};
pub use worker::{DeviceGuard, DeviceLock, WorkerHandle, WorkerState};

use crate::reference::{derive_sampling_target, generate_structured, run_reference_seeded, ReferenceError, SamplingParams, TensorMap};
use crate::tensor::{materialize_input, seed_base_for, ArchiveStore, Tensor, TensorArchive, TensorError};
use crate::trace::{
    bind_workload, BindError, BoundShapes, Correctness, DefinitionRecord, Environment, EvalStatus, EvaluationRecord,
    Performance, SolutionRecord, WorkloadRecord,
};
use crate::validate::{
    check_deterministic, check_matched_ratio, check_stochastic_rows, Regime, RowTarget, StochasticConfig, Tolerance,
    ValidateError, ValidationVerdict,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorMode {
    /// A fresh process per execution window, torn down afterwards.
    Isolated,
    /// A long-lived process per solution, reused across executions.
    Persistent,
}

impl FromStr for ExecutorMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "isolated" => Ok(ExecutorMode::Isolated),
            "persistent" => Ok(ExecutorMode::Persistent),
            _ => Err(format!("unknown mode `{s}` (isolated|persistent)")),
        }
    }
}

impl std::fmt::Display for ExecutorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecutorMode::Isolated => "isolated",
            ExecutorMode::Persistent => "persistent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingConfig {
    pub warmup: usize,
    pub runs: usize,
    pub timeout: Duration,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            warmup: 10,
            runs: 50,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mode: ExecutorMode,
    pub timing: TimingConfig,
    pub stochastic: StochasticConfig,
    /// Session seed mixed into every workload's input seeds.
    pub seed: u64,
    /// Replaces the per-dtype default tolerance for every output.
    pub tolerance: Option<Tolerance>,
    pub rho: Option<f64>,
    /// Keep a log of frames sent to plugins.
    pub record_frames: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: ExecutorMode::Persistent,
            timing: TimingConfig::default(),
            stochastic: StochasticConfig::default(),
            seed: 0,
            tolerance: None,
            rho: None,
            record_frames: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("binding workload: {0}")]
    Bind(#[from] BindError),
    #[error("materializing `{input}`: {source}")]
    Materialize {
        input: String,
        #[source]
        source: TensorError,
    },
    #[error("reference evaluator: {0}")]
    Reference(#[from] ReferenceError),
    #[error("validator: {0}")]
    Validate(#[from] ValidateError),
}

/// Inputs and reference outputs for one definition × workload.
#[derive(Debug)]
pub struct Prepared {
    pub bound: BoundShapes,
    pub seed_base: u64,
    pub inputs: TensorMap,
    pub reference: TensorMap,
    /// Per-row sampling targets for stochastic definitions.
    pub targets: Option<Vec<RowTarget>>,
}

/// A bootstrapped plugin serving calls outside the benchmarking pipeline.
#[derive(Debug)]
pub struct PluginKernel {
    proc: Mutex<PluginProcess>,
    entry_point: String,
    outputs: Vec<String>,
    timeout: Duration,
}

impl PluginKernel {
    pub fn call(&self, inputs: &TensorMap, axes: &BTreeMap<String, i64>) -> Result<TensorMap, ExecFailure> {
        let trailer = RunTrailer {
            entry_point: self.entry_point.clone(),
            axes: axes.clone(),
            outputs: self.outputs.clone(),
            seed: 0,
        };
        let mut proc = self.proc.lock().unwrap_or_else(|e| e.into_inner());
        Ok(proc.run(&to_archive(inputs), &trailer, self.timeout)?.into_map())
    }
}

/// Result of one evaluation plus what the scheduler needs to decide on retries.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub record: EvaluationRecord,
    /// The failure came from losing the process and may succeed elsewhere.
    pub retryable: bool,
    /// The worker itself died during the evaluation.
    pub worker_fault: bool,
    pub mode: ExecutorMode,
    pub elapsed_ms: f64,
}

/// A process for one execution window: owned (isolated) or borrowed from the worker's cache.
struct Lease {
    proc: PluginProcess,
    key: String,
    cached: bool,
}

pub struct Engine {
    cfg: EngineConfig,
    stager: Stager,
    launchers: Launchers,
    archives: ArchiveStore,
    baselines: BTreeMap<String, SolutionRecord>,
    prepared: Mutex<HashMap<(String, String), Arc<Prepared>>>,
    frame_log: FrameLog,
    host: String,
}

fn host_label() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .filter(|h| !h.is_empty())
        .or_else(|| std::fs::read_to_string("/etc/hostname").ok().map(|s| s.trim().to_string()))
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "localhost".into())
}

pub fn timestamp_now() -> String {
    chrono::Utc::now().naive_utc().format("%Y-%m-%dT%H:%M:%S%.6f").to_string()
}

fn to_archive(m: &TensorMap) -> TensorArchive {
    m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

impl Engine {
    /// `stage_root` holds the persistent sandbox cache; `dataset_root`
    /// resolves archive input paths.
    pub fn new(cfg: EngineConfig, stage_root: impl Into<std::path::PathBuf>, dataset_root: impl Into<std::path::PathBuf>, launchers: Launchers) -> Self {
        Engine {
            cfg,
            stager: Stager::new(stage_root),
            launchers,
            archives: ArchiveStore::new(dataset_root),
            baselines: BTreeMap::new(),
            prepared: Mutex::new(HashMap::new()),
            frame_log: Arc::new(Mutex::new(Vec::new())),
            host: host_label(),
        }
    }

    /// Reference latency for `definition` comes from timing this solution.
    pub fn set_baseline(&mut self, definition: &str, s: SolutionRecord) {
        self.baselines.insert(definition.to_string(), s);
    }

    pub fn baseline(&self, definition: &str) -> Option<&SolutionRecord> {
        self.baselines.get(definition)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stager(&self) -> &Stager {
        &self.stager
    }

    pub fn frames_sent(&self) -> Vec<SentFrame> {
        self.frame_log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Binds, materializes and computes reference outputs; cached per (definition, workload).
    pub fn prepare(&self, d: &DefinitionRecord, w: &WorkloadRecord) -> Result<Arc<Prepared>, EngineError> {
        let key = (d.name.clone(), w.uuid.clone());
        if let Some(p) = self.prepared.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(Arc::clone(p));
        }
        let bound = bind_workload(d, w)?;
        let seed_base = seed_base_for(&w.uuid, self.cfg.seed);
        let mut generated = generate_structured(d, &bound, w, seed_base)?;
        let mut inputs = TensorMap::new();
        for (name, spec) in &d.inputs {
            let t = match generated.shift_remove(name) {
                Some(t) => t,
                None => {
                    let ispec = w.inputs.get(name).ok_or_else(|| EngineError::Materialize {
                        input: name.clone(),
                        source: TensorError::ArchiveMissingKey(name.clone()),
                    })?;
                    materialize_input(ispec, &bound.inputs[name], spec.dtype, seed_base, name, &self.archives).map_err(
                        |source| EngineError::Materialize {
                            input: name.clone(),
                            source,
                        },
                    )?
                }
            };
            inputs.insert(name.clone(), t);
        }
        bound.check_deferred(&inputs)?;
        let reference = run_reference_seeded(d, &inputs, seed_base)?;
        let targets = if d.op_type.is_stochastic() {
            Some(sampling_targets(&inputs)?)
        } else {
            None
        };
        let p = Arc::new(Prepared {
            bound,
            seed_base,
            inputs,
            reference,
            targets,
        });
        self.prepared
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, Arc::clone(&p));
        Ok(p)
    }

    fn hello(&self, s: &SolutionRecord, staged: &StagedSolution) -> HostHello {
        HostHello {
            protocol: PROTOCOL_VERSION,
            solution: s.name.clone(),
            entry_point: s.spec.entry_point.clone(),
            file: staged.file.to_string_lossy().into_owned(),
            symbol: staged.symbol.clone(),
        }
    }

    fn bootstrap(&self, s: &SolutionRecord, timeout: Duration) -> Result<(PluginProcess, StagedSolution), ExecFailure> {
        let compile = |detail: String| ExecFailure {
            status: EvalStatus::FailedCompile,
            detail,
            process_lost: true,
        };
        let staged = self.stager.stage(s).map_err(compile)?;
        let cmd = self.launchers.command(&s.spec.language, &staged).map_err(compile)?;
        let log = self.cfg.record_frames.then(|| Arc::clone(&self.frame_log));
        let proc = PluginProcess::spawn(&cmd, &self.hello(s, &staged), &staged.dir, timeout, log)?;
        Ok((proc, staged))
    }

    /// Starts a standalone plugin process for in-service routing.
    pub fn bootstrap_kernel(&self, s: &SolutionRecord, outputs: Vec<String>) -> Result<PluginKernel, ExecFailure> {
        let timeout = self.cfg.timing.timeout;
        let (proc, _) = self.bootstrap(s, timeout)?;
        Ok(PluginKernel {
            proc: Mutex::new(proc),
            entry_point: s.spec.entry_point.clone(),
            outputs,
            timeout,
        })
    }

    fn spawn(&self, s: &SolutionRecord, worker: &WorkerHandle, timeout: Duration) -> Result<(PluginProcess, String), ExecFailure> {
        let (proc, staged) = self.bootstrap(s, timeout)?;
        log::debug!(
            "worker {} bootstrapped {} in {:.3} ms",
            worker.id(),
            s.name,
            proc.bootstrap_time().as_secs_f64() * 1e3
        );
        let mut i = worker.inner();
        i.warm.insert(staged.hash.clone());
        i.spawned += 1;
        i.runtime.extend(proc.runtime().clone());
        Ok((proc, staged.hash))
    }

    fn open(&self, s: &SolutionRecord, worker: &WorkerHandle, mode: ExecutorMode) -> Result<Lease, ExecFailure> {
        if worker.is_dead() {
            return Err(ExecFailure {
                status: EvalStatus::FailedRuntime,
                detail: format!("worker {} is dead", worker.id()),
                process_lost: true,
            });
        }
        if mode == ExecutorMode::Persistent {
            let key = solution_hash(s);
            let cached = worker.inner().processes.remove(&key);
            if let Some(mut proc) = cached {
                if proc.is_alive() {
                    return Ok(Lease { proc, key, cached: true });
                }
            }
        }
        let (proc, key) = self.spawn(s, worker, self.cfg.timing.timeout)?;
        Ok(Lease {
            proc,
            key,
            cached: mode == ExecutorMode::Persistent,
        })
    }

    fn close(&self, worker: &WorkerHandle, mut lease: Lease) {
        if lease.cached && lease.proc.is_alive() && !worker.is_dead() {
            worker.inner().processes.insert(lease.key, lease.proc);
        } else if lease.proc.is_alive() {
            lease.proc.shutdown();
        } else {
            lease.proc.kill();
        }
    }

    /// One RUN on a leased process, honouring an injected worker kill.
    fn run_once(
        &self,
        worker: &WorkerHandle,
        lease: &mut Lease,
        inputs: &TensorArchive,
        trailer: &RunTrailer,
    ) -> Result<TensorArchive, ExecFailure> {
        let kill = worker.take_pending_kill();
        if kill {
            lease.proc.kill();
            worker.kill();
            return Err(ExecFailure {
                status: EvalStatus::FailedRuntime,
                detail: format!("worker {} killed during execution", worker.id()),
                process_lost: true,
            });
        }
        lease.proc.run(inputs, trailer, self.cfg.timing.timeout)
    }

    fn time_window(
        &self,
        worker: &WorkerHandle,
        lease: &mut Lease,
        inputs: &TensorArchive,
        trailer: &RunTrailer,
        timing: &TimingConfig,
    ) -> Result<f64, ExecFailure> {
        for _ in 0..timing.warmup {
            self.run_once(worker, lease, inputs, trailer)?;
        }
        let runs = timing.runs.max(1);
        let mut total = Duration::ZERO;
        for _ in 0..runs {
            let t0 = Instant::now();
            self.run_once(worker, lease, inputs, trailer)?;
            total += t0.elapsed();
        }
        Ok(total.as_secs_f64() * 1e3 / runs as f64)
    }

    fn trailer(&self, s: &SolutionRecord, d_outputs: Vec<String>, axes: &BTreeMap<String, i64>, seed: u64) -> RunTrailer {
        RunTrailer {
            entry_point: s.spec.entry_point.clone(),
            axes: axes.clone(),
            outputs: d_outputs,
            seed,
        }
    }

    /// Runs `s` once on `worker` and returns its outputs.
    pub fn execute_solution(
        &self,
        s: &SolutionRecord,
        inputs: &TensorMap,
        axes: &BTreeMap<String, i64>,
        outputs: &[String],
        worker: &WorkerHandle,
        mode: ExecutorMode,
    ) -> Result<TensorMap, ExecFailure> {
        let _guard = worker.acquire();
        worker.set_state(WorkerState::Busy);
        let r = (|| {
            let mut lease = self.open(s, worker, mode)?;
            let trailer = self.trailer(s, outputs.to_vec(), axes, self.cfg.seed);
            let out = self.run_once(worker, &mut lease, &to_archive(inputs), &trailer);
            self.close(worker, lease);
            out.map(|a| a.into_map())
        })();
        worker.set_state(WorkerState::Idle);
        r
    }

    /// Mean latency in ms over `timing.runs` runs after `timing.warmup`
    /// untimed ones, all under the worker's lock.
    pub fn time_solution(
        &self,
        s: &SolutionRecord,
        inputs: &TensorMap,
        axes: &BTreeMap<String, i64>,
        outputs: &[String],
        worker: &WorkerHandle,
        mode: ExecutorMode,
        timing: &TimingConfig,
    ) -> Result<f64, ExecFailure> {
        let _guard = worker.acquire();
        worker.set_state(WorkerState::Busy);
        let r = (|| {
            let mut lease = self.open(s, worker, mode)?;
            let trailer = self.trailer(s, outputs.to_vec(), axes, self.cfg.seed);
            let out = self.time_window(worker, &mut lease, &to_archive(inputs), &trailer, timing);
            self.close(worker, lease);
            out
        })();
        worker.set_state(WorkerState::Idle);
        r
    }

    /// Times the built-in reference evaluator in this process.
    pub fn time_reference(&self, d: &DefinitionRecord, p: &Prepared, timing: &TimingConfig) -> Result<f64, EngineError> {
        for _ in 0..timing.warmup {
            run_reference_seeded(d, &p.inputs, p.seed_base)?;
        }
        let runs = timing.runs.max(1);
        let t0 = Instant::now();
        for _ in 0..runs {
            std::hint::black_box(run_reference_seeded(d, &p.inputs, p.seed_base)?);
        }
        Ok(t0.elapsed().as_secs_f64() * 1e3 / runs as f64)
    }

    fn regime(&self, dtype: crate::tensor::DType) -> Regime {
        let base = Regime::default_for(dtype);
        match (base, self.cfg.tolerance, self.cfg.rho) {
            (Regime::MatchedRatio { tol, rho }, t, r) => Regime::MatchedRatio {
                tol: t.unwrap_or(tol),
                rho: r.unwrap_or(rho),
            },
            (Regime::Deterministic(tol), t, Some(rho)) if rho < 1.0 => Regime::MatchedRatio {
                tol: t.unwrap_or(tol),
                rho,
            },
            (Regime::Deterministic(tol), t, _) => Regime::Deterministic(t.unwrap_or(tol)),
            (r, _, _) => r,
        }
    }

    fn check_outputs(&self, d: &DefinitionRecord, p: &Prepared, out: &TensorArchive) -> Result<ValidationVerdict, String> {
        let mut verdict = ValidationVerdict::pass();
        for (name, spec) in &d.outputs {
            let sol = out.get(name).ok_or_else(|| format!("output `{name}` missing from RESULT"))?;
            let reference = &p.reference[name];
            if sol.dtype() != spec.dtype || sol.shape() != reference.shape() {
                return Err(format!(
                    "output `{name}`: expected {} {:?}, got {} {:?}",
                    spec.dtype,
                    reference.shape(),
                    sol.dtype(),
                    sol.shape()
                ));
            }
            let v = match self.regime(spec.dtype) {
                Regime::Deterministic(tol) => check_deterministic(sol, reference, tol),
                Regime::MatchedRatio { tol, rho } => check_matched_ratio(sol, reference, tol, rho),
                Regime::Stochastic(_) => unreachable!("stochastic outputs are checked by sampling"),
            }
            .map_err(|e| e.to_string())?;
            verdict = verdict.merge(name, v);
        }
        Ok(verdict)
    }

    /// A record for a job that could not be evaluated at all.
    pub fn failure_outcome(&self, worker: &WorkerHandle, mode: ExecutorMode, status: EvalStatus, detail: String) -> EvalOutcome {
        EvalOutcome {
            record: EvaluationRecord {
                status,
                environment: Environment {
                    hardware: format!("{} ({})", self.host, worker.id()),
                    libs: BTreeMap::from([("tracebench".to_string(), VERSION.to_string())]),
                },
                timestamp: timestamp_now(),
                log: detail,
                correctness: None,
                performance: None,
            },
            retryable: false,
            worker_fault: false,
            mode,
            elapsed_ms: 0.0,
        }
    }

    /// Binds, materializes, validates and times `s` on `w`, producing a new record.
    pub fn run_evaluation(
        &self,
        d: &DefinitionRecord,
        w: &WorkloadRecord,
        s: &SolutionRecord,
        worker: &WorkerHandle,
        mode: ExecutorMode,
    ) -> Result<EvalOutcome, EngineError> {
        let started = Instant::now();
        let p = self.prepare(d, w)?;
        let _guard = worker.acquire();
        worker.set_state(WorkerState::Busy);
        let result = self.evaluate_locked(d, s, &p, worker, mode);
        worker.set_state(WorkerState::Idle);
        let mut log_lines = Vec::new();
        let (status, correctness, performance, failure) = match result {
            Ok(Evaluated {
                verdict,
                latency,
                reference_latency,
                notes,
            }) => {
                log_lines.extend(notes);
                let correctness = Some(correctness_of(&verdict));
                match (verdict.passed, latency) {
                    (true, Some(lat)) => (
                        EvalStatus::Passed,
                        correctness,
                        Some(Performance::new(lat, reference_latency.unwrap_or(f64::NAN))),
                        None,
                    ),
                    _ => {
                        log_lines.push(verdict.detail.clone());
                        (EvalStatus::FailedCorrectness, correctness, None, None)
                    }
                }
            }
            Err(f) => {
                log_lines.push(f.detail.clone());
                (f.status, None, None, Some(f))
            }
        };
        let worker_fault = worker.is_dead();
        let retryable = match &failure {
            Some(f) => worker_fault || (f.process_lost && mode == ExecutorMode::Persistent && f.status != EvalStatus::FailedCompile),
            None => false,
        };
        let mut libs = BTreeMap::from([("tracebench".to_string(), VERSION.to_string())]);
        libs.extend(worker.inner().runtime.clone());
        worker.inner().resident.insert(d.name.clone());
        let record = EvaluationRecord {
            status,
            environment: Environment {
                hardware: format!("{} ({})", self.host, worker.id()),
                libs,
            },
            timestamp: timestamp_now(),
            log: log_lines.into_iter().filter(|l| !l.is_empty()).collect::<Vec<_>>().join("\n"),
            correctness,
            performance,
        };
        Ok(EvalOutcome {
            record,
            retryable,
            worker_fault,
            mode,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn evaluate_locked(
        &self,
        d: &DefinitionRecord,
        s: &SolutionRecord,
        p: &Prepared,
        worker: &WorkerHandle,
        mode: ExecutorMode,
    ) -> Result<Evaluated, ExecFailure> {
        let mut notes = Vec::new();
        let inputs = to_archive(&p.inputs);
        let outputs: Vec<String> = d.outputs.keys().cloned().collect();
        let trailer = self.trailer(s, outputs.clone(), &p.bound.axes, p.seed_base);

        // Correctness window.
        let mut lease = self.open(s, worker, mode)?;
        notes.push(format!("bootstrap_ms={:.3}", lease.proc.bootstrap_time().as_secs_f64() * 1e3));
        let verdict = match &p.targets {
            Some(targets) => self.check_sampler(worker, &mut lease, &inputs, &trailer, targets, &outputs),
            None => self
                .run_once(worker, &mut lease, &inputs, &trailer)
                .and_then(|out| self.check_outputs(d, p, &out).map_err(contract_failure)),
        };
        let verdict = match verdict {
            Ok(v) => v,
            Err(f) => {
                self.close(worker, lease);
                return Err(f);
            }
        };
        if !verdict.passed {
            self.close(worker, lease);
            return Ok(Evaluated {
                verdict,
                latency: None,
                reference_latency: None,
                notes,
            });
        }

        // Timing window: isolated mode gets a fresh process.
        if mode == ExecutorMode::Isolated {
            self.close(worker, lease);
            lease = self.open(s, worker, mode)?;
        }
        let timed = self.time_window(worker, &mut lease, &inputs, &trailer, &self.cfg.timing);
        self.close(worker, lease);
        let latency = timed?;

        let reference_latency = match self.baselines.get(&d.name) {
            Some(b) => {
                let bt = self.trailer(b, outputs, &p.bound.axes, p.seed_base);
                let r = self.open(b, worker, mode).and_then(|mut l| {
                    let t = self.time_window(worker, &mut l, &inputs, &bt, &self.cfg.timing);
                    self.close(worker, l);
                    t
                });
                match r {
                    Ok(ms) => Some(ms),
                    Err(f) if worker.is_dead() => return Err(f),
                    Err(f) => {
                        notes.push(format!("baseline `{}` failed ({}); timing reference in-process", b.name, f.detail));
                        None
                    }
                }
            }
            None => None,
        };
        let reference_latency = match reference_latency {
            Some(ms) => ms,
            None => self.time_reference(d, p, &self.cfg.timing).map_err(|e| ExecFailure {
                status: EvalStatus::FailedRuntime,
                detail: format!("reference timing failed: {e}"),
                process_lost: false,
            })?,
        };
        Ok(Evaluated {
            verdict,
            latency: Some(latency),
            reference_latency: Some(reference_latency),
            notes,
        })
    }

    fn check_sampler(
        &self,
        worker: &WorkerHandle,
        lease: &mut Lease,
        inputs: &TensorArchive,
        trailer: &RunTrailer,
        targets: &[RowTarget],
        outputs: &[String],
    ) -> Result<ValidationVerdict, ExecFailure> {
        let mut failure = None;
        let name = outputs.first().cloned().unwrap_or_default();
        let verdict = check_stochastic_rows(
            |seed| {
                let t = RunTrailer {
                    seed,
                    ..trailer.clone()
                };
                let out = self.run_once(worker, lease, inputs, &t).map_err(|f| {
                    failure = Some(f);
                    "plugin failed".to_string()
                })?;
                let samples = out.get(&name).and_then(Tensor::ints).ok_or_else(|| {
                    failure = Some(contract_failure(format!("output `{name}` missing or not integer")));
                    "bad output".to_string()
                })?;
                Ok(samples.iter().map(|&i| usize::try_from(i).unwrap_or(usize::MAX)).collect())
            },
            targets,
            &self.cfg.stochastic,
        );
        match (verdict, failure) {
            (_, Some(f)) => Err(f),
            (Ok(v), None) => Ok(v),
            (Err(e), None) => Err(contract_failure(e.to_string())),
        }
    }
}

struct Evaluated {
    verdict: ValidationVerdict,
    latency: Option<f64>,
    reference_latency: Option<f64>,
    notes: Vec<String>,
}

fn contract_failure(detail: String) -> ExecFailure {
    ExecFailure {
        status: EvalStatus::FailedRuntime,
        detail: format!("output contract violated: {detail}"),
        process_lost: false,
    }
}

fn correctness_of(v: &ValidationVerdict) -> Correctness {
    Correctness {
        max_relative_error: v.max_relative_error,
        max_absolute_error: v.max_absolute_error,
        extra: (!v.extra.is_empty()).then(|| v.extra.clone()),
    }
}

/// Sampling targets from positional inputs `(probs, top_k, top_p)`.
pub fn sampling_targets(inputs: &TensorMap) -> Result<Vec<RowTarget>, ReferenceError> {
    let vals: Vec<&Tensor> = inputs.values().collect();
    let [probs, k, top_p] = vals.as_slice() else {
        return Err(ReferenceError::InvalidParameter("sampling expects (probs, top_k, top_p)".into()));
    };
    let params = SamplingParams::from_scalars(
        k.item().ok_or_else(|| ReferenceError::InvalidParameter("top_k must be a scalar".into()))?,
        top_p.item().ok_or_else(|| ReferenceError::InvalidParameter("top_p must be a scalar".into()))?,
    )?;
    let &[batch, vocab] = probs.shape() else {
        return Err(ReferenceError::InvalidParameter("probs must be [batch, vocab]".into()));
    };
    (0..batch)
        .map(|b| {
            let row: Vec<f64> = (0..vocab).map(|i| probs.get_f64(b * vocab + i)).collect();
            derive_sampling_target(&row, params)
                .map(|(mask, q)| RowTarget { mask, q })
                .map_err(|e| match e {
                    ReferenceError::DegenerateDistribution { .. } => ReferenceError::DegenerateDistribution { row: b },
                    e => e,
                })
        })
        .collect()
}
