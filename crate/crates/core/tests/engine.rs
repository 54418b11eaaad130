mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use serde_json::json;
use tracebench_core::engine::*;
use tracebench_core::reference::TensorMap;
use tracebench_core::tensor::{DType, Tensor};
use tracebench_core::trace::EvalStatus;

fn cfg(mode: ExecutorMode) -> EngineConfig {
    EngineConfig {
        mode,
        timing: quick_timing(),
        ..Default::default()
    }
}

#[test]
fn identity_plugin_echoes_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Isolated));
    let s = native_solution("id", "d", "t", "identity", no_params());
    let mut inputs = TensorMap::new();
    inputs.insert("x".into(), Tensor::from_f32(DType::BF16, vec![3], vec![1.0, -2.5, 3.25]).unwrap());
    inputs.insert("i".into(), Tensor::from_i64(DType::I32, vec![2], vec![0, 7]).unwrap());
    let w = WorkerHandle::new("w0");
    let out = e
        .execute_solution(&s, &inputs, &axes(&[]), &[], &w, ExecutorMode::Isolated)
        .unwrap();
    assert_eq!(out.len(), 2);
    for (k, v) in &inputs {
        assert!(out[k].bitwise_eq(v));
    }
}

#[test]
fn correct_gemm_passes_with_finite_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Persistent));
    let d = gemm_def(16, 32);
    let w = random_workload("wl-1", &d, &[("M", 6)]);
    let s = native_solution("g", &d.name, "t", "gemm", no_params());
    let worker = WorkerHandle::new("w0");
    let out = e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Persistent).unwrap();
    let r = &out.record;
    assert_eq!(r.status, EvalStatus::Passed, "{}", r.log);
    let perf = r.performance.as_ref().unwrap();
    assert!(perf.speedup_factor.is_finite() && perf.speedup_factor > 0.0);
    assert_eq!(perf.speedup_factor, perf.reference_latency_ms / perf.latency_ms);
    assert_eq!(r.correctness.as_ref().unwrap().max_absolute_error, 0.0);
    assert!(r.environment.hardware.ends_with("(w0)"));
    assert!(r.environment.libs.contains_key("native-plugin"));
    assert!(r.log.contains("bootstrap_ms="));
}

#[test]
fn offset_plugin_fails_correctness_with_recorded_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Isolated));
    let d = gemm_def(8, 8);
    let w = random_workload("wl-2", &d, &[("M", 4)]);
    let s = native_solution("off", &d.name, "t", "gemm_offset", json!({"offset": 10.0}));
    let out = e
        .run_evaluation(&d, &w, &s, &WorkerHandle::new("w0"), ExecutorMode::Isolated)
        .unwrap();
    assert_eq!(out.record.status, EvalStatus::FailedCorrectness);
    assert!(out.record.performance.is_none());
    let c = out.record.correctness.unwrap();
    // Values near 10 land on the f16 grid with spacing <= 2^-7.
    assert!((c.max_absolute_error - 10.0).abs() <= 1.0 / 128.0, "{}", c.max_absolute_error);
    assert!(!out.retryable);
}

#[test]
fn failures_map_to_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(ExecutorMode::Isolated);
    c.timing.timeout = Duration::from_millis(300);
    let e = engine(dir.path(), c);
    let d = gemm_def(4, 4);
    let w = random_workload("wl-3", &d, &[("M", 2)]);
    let worker = WorkerHandle::new("w0");
    let run = |sym: &str, params: serde_json::Value, mode| {
        let s = native_solution(sym, &d.name, "t", sym, params);
        e.run_evaluation(&d, &w, &s, &worker, mode).unwrap()
    };
    let o = run("fail_hello", no_params(), ExecutorMode::Isolated);
    assert_eq!(o.record.status, EvalStatus::FailedCompile);
    assert!(o.record.log.contains("bootstrap refused"));
    let o = run("error", no_params(), ExecutorMode::Persistent);
    assert_eq!(o.record.status, EvalStatus::FailedRuntime);
    assert!(!o.retryable, "an ERROR frame is a final verdict");
    let o = run("garbage", no_params(), ExecutorMode::Isolated);
    assert_eq!(o.record.status, EvalStatus::FailedRuntime);
    assert!(o.record.log.contains("protocol error"), "{}", o.record.log);
    let o = run("crash", no_params(), ExecutorMode::Persistent);
    assert_eq!(o.record.status, EvalStatus::FailedRuntime);
    assert!(o.retryable);
    let o = run("sleep", json!({"sleep_ms": 5000}), ExecutorMode::Persistent);
    assert_eq!(o.record.status, EvalStatus::Timeout);
    assert!(o.retryable);
    // The worker survives and serves the next solution.
    let o = run("gemm", no_params(), ExecutorMode::Persistent);
    assert_eq!(o.record.status, EvalStatus::Passed, "{}", o.record.log);
}

#[test]
fn unknown_language_is_a_compile_failure() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Isolated));
    let d = gemm_def(4, 4);
    let w = random_workload("wl-4", &d, &[("M", 2)]);
    let mut s = native_solution("cu", &d.name, "t", "gemm", no_params());
    s.spec.language = "cuda".into();
    let o = e.run_evaluation(&d, &w, &s, &WorkerHandle::new("w0"), ExecutorMode::Isolated).unwrap();
    assert_eq!(o.record.status, EvalStatus::FailedCompile);
}

#[test]
fn stale_state_cannot_pass_in_isolated_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(ExecutorMode::Isolated);
    c.record_frames = true;
    let e = engine(dir.path(), c);
    let d = gemm_def(8, 16);
    let s = native_solution("ctr", &d.name, "t", "counter", no_params());
    let worker = WorkerHandle::new("w0");
    for uuid in ["a", "b"] {
        let w = random_workload(uuid, &d, &[("M", 3)]);
        let o = e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Isolated).unwrap();
        assert_eq!(o.record.status, EvalStatus::Passed, "{}", o.record.log);
    }
    // The same plugin reused across evaluations carries state and fails.
    let w = random_workload("c", &d, &[("M", 3)]);
    let o = e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Persistent).unwrap();
    assert!(o.record.status.is_passed());
    let w = random_workload("d", &d, &[("M", 3)]);
    let o = e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Persistent).unwrap();
    assert_eq!(o.record.status, EvalStatus::FailedCorrectness);

    // Reference outputs never cross the wire.
    let frames = e.frames_sent();
    assert!(!frames.is_empty());
    for uuid in ["a", "b", "c", "d"] {
        let p = e.prepare(&d, &random_workload(uuid, &d, &[("M", 3)])).unwrap();
        let out_digest = tensor_digest(&p.reference["C"]);
        for f in &frames {
            for (name, digest) in &f.tensors {
                assert!(d.inputs.contains_key(name), "sent non-input tensor {name}");
                assert_ne!(digest, &out_digest);
            }
        }
    }
}

#[test]
fn isolated_mode_spawns_per_window_and_persistent_reuses() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Isolated));
    let d = gemm_def(4, 4);
    let s = native_solution("g", &d.name, "t", "gemm", no_params());
    let iso = WorkerHandle::new("iso");
    let per = WorkerHandle::new("per");
    for uuid in ["x", "y"] {
        let w = random_workload(uuid, &d, &[("M", 2)]);
        assert!(passed(&e.run_evaluation(&d, &w, &s, &iso, ExecutorMode::Isolated).unwrap().record));
        assert!(passed(&e.run_evaluation(&d, &w, &s, &per, ExecutorMode::Persistent).unwrap().record));
    }
    assert_eq!(iso.spawn_count(), 4, "correctness and timing windows each get a process");
    assert_eq!(per.spawn_count(), 1);
    assert!(per.has_warm(&solution_hash(&s)));
    assert!(per.has_resident(&d.name));
}

#[test]
fn timing_with_one_run_is_that_run() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Persistent));
    let s = native_solution("slow", "d", "t", "identity", json!({"delay_us": 2000}));
    let w = WorkerHandle::new("w0");
    let inputs: TensorMap = [("x".to_string(), Tensor::scalar_f32(1.0))].into_iter().collect();
    let t = TimingConfig {
        warmup: 0,
        runs: 1,
        timeout: Duration::from_secs(5),
    };
    let ms = e
        .time_solution(&s, &inputs, &axes(&[]), &[], &w, ExecutorMode::Persistent, &t)
        .unwrap();
    assert!((2.0..50.0).contains(&ms), "{ms}");
}

#[test]
fn doubling_work_roughly_doubles_latency() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Persistent));
    let w = WorkerHandle::new("w0");
    let inputs: TensorMap = [("x".to_string(), Tensor::scalar_f32(1.0))].into_iter().collect();
    let t = TimingConfig {
        warmup: 2,
        runs: 10,
        timeout: Duration::from_secs(5),
    };
    let lat = |us: u64| {
        let s = native_solution(&format!("d{us}"), "d", "t", "identity", json!({"delay_us": us}));
        e.time_solution(&s, &inputs, &axes(&[]), &[], &w, ExecutorMode::Persistent, &t)
            .unwrap()
    };
    let (one, two) = (lat(4000), lat(8000));
    let ratio = two / one;
    assert!((1.4..=2.6).contains(&ratio), "ratio {ratio} ({one} ms vs {two} ms)");
}

#[test]
fn concurrent_timing_on_one_worker_serializes() {
    let dir = tempfile::tempdir().unwrap();
    let e = Arc::new(engine(dir.path(), cfg(ExecutorMode::Persistent)));
    let w = Arc::new(WorkerHandle::new("w0"));
    let t = TimingConfig {
        warmup: 0,
        runs: 10,
        timeout: Duration::from_secs(5),
    };
    let inputs: TensorMap = [("x".to_string(), Tensor::scalar_f32(1.0))].into_iter().collect();
    let start = Instant::now();
    let handles: Vec<_> = (0..2)
        .map(|i| {
            let (e, w, inputs) = (Arc::clone(&e), Arc::clone(&w), inputs.clone());
            std::thread::spawn(move || {
                let s = native_solution(&format!("s{i}"), "d", "t", "sleep", json!({"sleep_ms": 5}));
                e.time_solution(&s, &inputs, &axes(&[]), &[], &w, ExecutorMode::Persistent, &t)
                    .unwrap()
            })
        })
        .collect();
    let sum: f64 = handles.into_iter().map(|h| h.join().unwrap() * t.runs as f64).sum();
    let wall = start.elapsed().as_secs_f64() * 1e3;
    assert!(wall >= sum, "wall {wall} ms < sum of timed windows {sum} ms");
}

#[test]
fn health_check_drops_dead_processes() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path(), cfg(ExecutorMode::Persistent));
    let d = gemm_def(4, 4);
    let s = native_solution("g", &d.name, "t", "gemm", no_params());
    let worker = WorkerHandle::new("w0");
    let w = random_workload("h", &d, &[("M", 2)]);
    assert!(passed(&e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Persistent).unwrap().record));
    assert!(worker.health_check(Duration::from_secs(1)));
    worker.inject_kill();
    let o = e.run_evaluation(&d, &w, &s, &worker, ExecutorMode::Persistent).unwrap();
    assert_eq!(o.record.status, EvalStatus::FailedRuntime);
    assert!(o.worker_fault && o.retryable);
    assert!(!worker.health_check(Duration::from_secs(1)));
}
