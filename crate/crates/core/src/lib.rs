//! Kernel trace schema, reference kernels, validators, an out-of-process
//! benchmarking engine, a multi-worker scheduler, leaderboard metrics and a
//! runtime dispatch index.

pub mod dispatch;
pub mod engine;
pub mod metrics;
pub mod plugin;
pub mod reference;
pub mod sched;
pub mod tensor;
pub mod trace;
pub mod validate;

pub use dispatch::{build_index, ApplyConfig, DispatchIndex, DispatchKey, Dispatcher, Registry};
pub use engine::{Engine, EngineConfig, EvalOutcome, ExecutorMode, Launchers, TimingConfig, WorkerHandle};
pub use metrics::{aggregate_leaderboard, fast_p, fast_p_curve, run_feedback_loop, standard_grid, FastPCurve, LeaderboardRow};
pub use reference::{run_reference, TensorMap};
pub use sched::{CostModel, Job, JobRunner, Scheduler, SchedulerConfig};
pub use tensor::{DType, Tensor, TensorArchive};
pub use trace::{
    Dataset, DefinitionRecord, EvalStatus, EvaluationRecord, OpType, SolutionRecord, TraceRecord, WorkloadRecord,
};
pub use validate::{Regime, StochasticConfig, Tolerance, ValidationVerdict};
