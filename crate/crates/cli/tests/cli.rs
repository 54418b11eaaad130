use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use tracebench_core::tensor::DType;
use tracebench_core::trace::*;

const BIN: &str = env!("CARGO_BIN_EXE_tracebench");

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(BIN);
    c.args(args).env_remove("FIB_ENABLE_APPLY");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn tracebench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/traces")
}

fn spec(shape: &[&str], dtype: DType) -> TensorSpec {
    TensorSpec::new(shape, dtype)
}

fn gemm_def() -> DefinitionRecord {
    DefinitionRecord {
        name: "gemm_n8_k8".into(),
        description: String::new(),
        op_type: OpType::Gemm,
        tags: vec![],
        axes: [("M", None), ("N", Some(8)), ("K", Some(8))]
            .into_iter()
            .map(|(n, v)| (n.to_string(), v.map(AxisSpec::constant).unwrap_or_else(AxisSpec::var)))
            .collect(),
        constraints: vec![],
        inputs: [("A", spec(&["M", "K"], DType::F16)), ("B", spec(&["N", "K"], DType::F16))]
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect(),
        outputs: [("C".to_string(), spec(&["M", "N"], DType::F16))].into_iter().collect(),
        reference: String::new(),
    }
}

fn rmsnorm_def() -> DefinitionRecord {
    DefinitionRecord {
        name: "fused_add_rmsnorm_h64".into(),
        description: String::new(),
        op_type: OpType::FusedAddRmsnorm,
        tags: vec![],
        axes: [("batch_size", None), ("hidden_size", Some(64))]
            .into_iter()
            .map(|(n, v)| (n.to_string(), v.map(AxisSpec::constant).unwrap_or_else(AxisSpec::var)))
            .collect(),
        constraints: vec![],
        inputs: [
            ("x", spec(&["batch_size", "hidden_size"], DType::F32)),
            ("residual", spec(&["batch_size", "hidden_size"], DType::F32)),
            ("weight", spec(&["hidden_size"], DType::F32)),
            ("eps", spec(&[], DType::F32)),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect(),
        outputs: [
            ("y", spec(&["batch_size", "hidden_size"], DType::F32)),
            ("new_residual", spec(&["batch_size", "hidden_size"], DType::F32)),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect(),
        reference: String::new(),
    }
}

fn workload(uuid: &str, d: &DefinitionRecord, axes: &[(&str, i64)]) -> WorkloadRecord {
    WorkloadRecord {
        uuid: uuid.into(),
        axes: axes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        inputs: d.inputs.keys().map(|k| (k.clone(), InputSpec::Random { seed: None })).collect(),
    }
}

fn native(name: &str, d: &DefinitionRecord, author: &str, symbol: &str, params: Value) -> SolutionRecord {
    SolutionRecord {
        name: name.into(),
        definition: d.name.clone(),
        author: author.into(),
        description: None,
        spec: BuildSpec {
            language: "native".into(),
            target_hardware: vec!["cpu".into()],
            entry_point: format!("kernel.json::{symbol}"),
            dependencies: vec![],
        },
        sources: vec![SourceFile {
            path: "kernel.json".into(),
            content: params.to_string(),
        }],
    }
}

/// `(uuid, axes)` per workload.
type Workloads<'a> = &'a [(&'a str, &'a [(&'a str, i64)])];

fn dataset(defs: &[(&DefinitionRecord, Workloads<'_>)], solutions: &[SolutionRecord]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = Dataset::empty(dir.path());
    for (d, workloads) in defs {
        ds.write_definition(d).unwrap();
        for (uuid, axes) in workloads.iter() {
            ds.write_workload(&d.name, &workload(uuid, d, axes)).unwrap();
        }
    }
    for s in solutions {
        ds.write_solution(s).unwrap();
    }
    dir
}

fn gemm_dataset(solutions: &[SolutionRecord]) -> TempDir {
    dataset(&[(&gemm_def(), &[("w-m2", &[("M", 2)]), ("w-m5", &[("M", 5)])])], solutions)
}

fn reload(dir: &Path) -> Dataset {
    let (ds, violations) = Dataset::load(dir).unwrap();
    assert!(violations.is_empty(), "{violations:?}");
    ds
}

fn quick(dir: &Path) -> Vec<String> {
    ["--dataset", dir.to_str().unwrap(), "--warmup", "1", "--runs", "3"]
        .map(str::to_string)
        .to_vec()
}

fn bench(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["bench".to_string()];
    args.extend(quick(dir));
    args.extend(extra.iter().map(|s| s.to_string()));
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn evaluations(ds: &Dataset) -> Vec<(String, String, EvalStatus)> {
    let mut v: Vec<_> = ds
        .evaluations()
        .map(|t| {
            (
                t.solution_name().unwrap().to_string(),
                t.workload.uuid.clone(),
                t.evaluation.as_ref().unwrap().status,
            )
        })
        .collect();
    v.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    v
}

#[test]
fn validate_fixture_documents_have_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    for e in fs::read_dir(fixtures()).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
    }
    let o = run(&["validate", "--dataset", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("0 violation(s)"));
}

#[test]
fn validate_lists_exactly_the_corrupted_file() {
    let dir = gemm_dataset(&[native("g", &gemm_def(), "a", "gemm", json!({}))]);
    let bad = dir.path().join("workloads/gemm_n8_k8/w-m2.json");
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&bad).unwrap()).unwrap();
    doc["workload"]["axes"]["M"] = json!("two");
    fs::write(&bad, doc.to_string()).unwrap();
    let o = run(&["validate", "--dataset", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    let listed: Vec<&str> = out.lines().filter(|l| !l.contains("violation(s)")).collect();
    assert_eq!(listed.len(), 1, "{out}");
    assert!(listed[0].contains("w-m2.json") && listed[0].contains("axes.M"), "{out}");
}

#[test]
fn validate_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--dataset", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 violation(s)"));
}

#[test]
fn missing_dataset_is_an_operational_error() {
    let o = run(&["validate", "--dataset", "/definitely/not/here"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn bench_writes_one_record_per_pair_and_nothing_else() {
    let d = gemm_def();
    let dir = gemm_dataset(&[
        native("g1", &d, "a", "gemm", json!({})),
        native("g2", &d, "b", "gemm", json!({"delay_us": 50})),
    ]);
    let before: BTreeMap<PathBuf, Vec<u8>> = walk(dir.path());
    let o = bench(dir.path(), &["--workers", "2"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let ds = reload(dir.path());
    let evals = evaluations(&ds);
    assert_eq!(evals.len(), 4);
    assert!(evals.iter().all(|e| e.2 == EvalStatus::Passed), "{evals:?}");
    let after = walk(dir.path());
    for (p, bytes) in &before {
        assert_eq!(after.get(p), Some(bytes), "{} changed", p.display());
    }
    assert!(after.keys().filter(|p| !before.contains_key(*p)).all(|p| p.starts_with("traces")));

    // Re-running appends rather than replacing.
    assert_eq!(code(&bench(dir.path(), &["--mode", "isolated"])), 0);
    assert_eq!(evaluations(&reload(dir.path())).len(), 8);
}

fn walk(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn bench_solution_filter_runs_only_that_solution() {
    let d = gemm_def();
    let dir = gemm_dataset(&[native("g1", &d, "a", "gemm", json!({})), native("g2", &d, "b", "gemm", json!({}))]);
    let o = bench(dir.path(), &["--filter-solution", "g2"]);
    assert_eq!(code(&o), 0);
    let evals = evaluations(&reload(dir.path()));
    assert_eq!(evals.len(), 2);
    assert!(evals.iter().all(|e| e.0 == "g2"));

    let o = bench(dir.path(), &["--filter-definition", "nothing_by_this_name"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("no solution x workload pairs"));
}

#[test]
fn crashing_solution_fails_at_runtime_without_affecting_others() {
    let d = gemm_def();
    let dir = gemm_dataset(&[native("good", &d, "a", "gemm", json!({})), native("bad", &d, "a", "crash", json!({}))]);
    let scratch = tempfile::tempdir().unwrap();
    let out = scratch.path().join("run.json");
    let o = bench(dir.path(), &["--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    let evals = evaluations(&reload(dir.path()));
    assert_eq!(evals.len(), 4);
    for (s, _, status) in &evals {
        let want = if s == "good" { EvalStatus::Passed } else { EvalStatus::FailedRuntime };
        assert_eq!(*status, want, "{evals:?}");
    }
    let dump: Vec<Value> = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(dump.len(), 4);
}

#[test]
fn bench_rejects_a_zero_worker_count() {
    let dir = gemm_dataset(&[]);
    let o = bench(dir.path(), &["--workers", "0"]);
    assert_eq!(code(&o), 2);
}

fn passed_trace(d: &str, solution: &str, uuid: &str, speedup: f64) -> Value {
    json!({
        "definition": d,
        "workload": {"uuid": uuid, "axes": {"M": 4}, "inputs": {"A": {"type": "random"}, "B": {"type": "random"}}},
        "solution": solution,
        "evaluation": {
            "status": "PASSED",
            "environment": {"hardware": "cpu", "libs": {}},
            "timestamp": "2025-01-01T00:00:00",
            "log": "",
            "correctness": {"max_relative_error": 0.0, "max_absolute_error": 0.0, "extra": null},
            "performance": {"latency_ms": 1.0 / speedup, "reference_latency_ms": 1.0, "speedup_factor": speedup}
        }
    })
}

fn write_traces(dir: &Path, traces: &[Value]) {
    fs::create_dir_all(dir.join("traces")).unwrap();
    for (i, t) in traces.iter().enumerate() {
        fs::write(dir.join(format!("traces/t{i:03}.json")), t.to_string()).unwrap();
    }
}

#[test]
fn report_without_evaluations_fails() {
    let dir = gemm_dataset(&[native("g", &gemm_def(), "a", "gemm", json!({}))]);
    let out = tempfile::tempdir().unwrap();
    let o = run(&["report", "--dataset", dir.path().to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no evaluations"));
}

#[test]
fn report_single_solution_gives_one_row() {
    let d = gemm_def();
    let dir = gemm_dataset(&[native("g", &d, "a", "gemm", json!({}))]);
    write_traces(dir.path(), &[passed_trace(&d.name, "g", "w-1", 1.5)]);
    let out = tempfile::tempdir().unwrap();
    let o = run(&["report", "--dataset", dir.path().to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.path().join("leaderboard.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(out.path().join("curves/a__gemm_n8_k8.csv").exists());
}

#[test]
fn report_orders_authors_by_area() {
    let d = gemm_def();
    let dir = gemm_dataset(&[native("slow", &d, "alice", "gemm", json!({})), native("fast", &d, "bob", "gemm", json!({}))]);
    write_traces(
        dir.path(),
        &[
            passed_trace(&d.name, "slow", "w-1", 0.5),
            passed_trace(&d.name, "slow", "w-2", 0.8),
            passed_trace(&d.name, "fast", "w-1", 2.0),
            passed_trace(&d.name, "fast", "w-2", 3.0),
        ],
    );
    let out = tempfile::tempdir().unwrap();
    let o = run(&["report", "--dataset", dir.path().to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.path().join("leaderboard.json")).unwrap()).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    let authors: Vec<&str> = rows.iter().map(|r| r["author"].as_str().unwrap()).collect();
    assert_eq!(authors, ["bob", "alice"]);
    assert!(rows[0]["curve"]["auc"].as_f64() > rows[1]["curve"]["auc"].as_f64());
}

fn rms_dataset() -> TempDir {
    let d = rmsnorm_def();
    let dir = dataset(
        &[(&d, &[("b2", &[("batch_size", 2)]), ("b8", &[("batch_size", 8)])])],
        &[
            native("rms_fast", &d, "a", "rmsnorm", json!({})),
            native("rms_slow", &d, "a", "rmsnorm", json!({"delay_us": 3000})),
        ],
    );
    let o = bench(dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    dir
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{out}"))
}

fn counter(out: &str, key: &str) -> u64 {
    let line = out.lines().find(|l| l.starts_with("calls:")).unwrap();
    let toks: Vec<&str> = line.split_whitespace().collect();
    let i = toks.iter().position(|t| *t == format!("{key}:")).unwrap();
    toks[i + 1].parse().unwrap()
}

#[test]
fn index_and_apply_demo_route_to_the_fastest() {
    let dir = rms_dataset();
    let scratch = tempfile::tempdir().unwrap();
    let index = scratch.path().join("index.json");
    let index = index.to_str().unwrap();
    let o = run(&["build-index", "--dataset", dir.path().to_str().unwrap(), "--out", index]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(index).unwrap()).unwrap();
    assert_eq!(doc["entries"].as_array().unwrap().len(), 2);

    let demo = |env: &[(&str, &str)], extra: &[&str]| {
        let mut args = vec!["apply-demo", "--dataset", dir.path().to_str().unwrap(), "--definition", "fused_add_rmsnorm_h64"];
        args.extend_from_slice(&["--axes", "batch_size=8", "--reps", "20", "--index", index]);
        args.extend_from_slice(extra);
        run_env(&args, env)
    };

    let on = demo(&[("FIB_ENABLE_APPLY", "1")], &[]);
    let out = stdout(&on);
    assert_eq!(code(&on), 0, "{out}{}", String::from_utf8_lossy(&on.stderr));
    assert_eq!(field(&out, "indexed"), "rms_fast");
    assert_eq!(counter(&out, "routed"), 21);
    assert_eq!(counter(&out, "probes"), 21, "one probe per call");
    assert!(out.contains("output y: agrees") && out.contains("output new_residual: agrees"), "{out}");

    let off = demo(&[], &[]);
    let out = stdout(&off);
    assert_eq!(code(&off), 0);
    assert_eq!(field(&out, "enabled"), "false");
    assert_eq!(counter(&out, "probes"), 0);
    assert_eq!(counter(&out, "fallbacks"), 21);

    let sub = demo(&[("FIB_ENABLE_APPLY", "1")], &["--substitute-fallback"]);
    let out = stdout(&sub);
    assert_eq!(code(&sub), 0);
    assert_eq!(counter(&out, "routed"), 21);
    let ratio: f64 = field(&out, "ratio").parse().unwrap();
    assert!(ratio.is_finite() && ratio > 0.0);
}

#[test]
fn apply_demo_without_evaluations_reports_an_empty_index() {
    let d = rmsnorm_def();
    let dir = dataset(&[(&d, &[("b2", &[("batch_size", 2)])])], &[native("r", &d, "a", "rmsnorm", json!({}))]);
    let o = run(&[
        "apply-demo",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--definition",
        &d.name,
        "--axes",
        "batch_size=2",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no entries"));
}

fn candidates(docs: &[SolutionRecord]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (i, s) in docs.iter().enumerate() {
        fs::write(dir.path().join(format!("{i:02}.json")), serialize_solution(s)).unwrap();
    }
    dir
}

fn feedback(dir: &Path, provider: &Path) -> Output {
    let mut args = vec!["loop".to_string()];
    args.extend(quick(dir));
    args.extend(["--definition", "gemm_n8_k8", "--iterations", "3", "--provider", provider.to_str().unwrap()].map(str::to_string));
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn loop_keeps_the_fastest_passing_candidate() {
    let d = gemm_def();
    let dir = gemm_dataset(&[]);
    let cands = candidates(&[
        native("c0_wrong", &d, "agent", "gemm_offset", json!({"offset": 10.0})),
        native("c1_slow", &d, "agent", "gemm", json!({"delay_us": 3000})),
        native("c2_plain", &d, "agent", "gemm", json!({})),
    ]);
    let o = feedback(dir.path(), cands.path());
    let out = stdout(&o);
    assert_eq!(code(&o), 0, "{out}{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.contains("best: c2_plain"), "{out}");
    let ds = reload(dir.path());
    assert_eq!(ds.solutions.keys().collect::<Vec<_>>(), ["c2_plain"]);
    let evals = evaluations(&ds);
    assert_eq!(evals.len(), 2);
    assert!(evals.iter().all(|e| e.0 == "c2_plain" && e.2 == EvalStatus::Passed));
}

#[test]
fn loop_with_no_passing_candidate_exits_with_failures() {
    let d = gemm_def();
    let dir = gemm_dataset(&[]);
    let cands = candidates(&[
        native("e0", &d, "agent", "error", json!({})),
        native("e1", &d, "agent", "gemm_offset", json!({"offset": 10.0})),
        native("e2", &d, "agent", "error", json!({})),
    ]);
    let o = feedback(dir.path(), cands.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("no candidate passed"));
    assert!(reload(dir.path()).solutions.is_empty());
}

#[test]
fn hidden_plugin_mode_answers_on_stdio() {
    // Closing stdin before the handshake is an abnormal end for a plugin.
    let o = Command::new(BIN).arg("native-plugin").stdin(std::process::Stdio::null()).output().unwrap();
    assert_ne!(o.status.code(), Some(0));
    let help = stdout(&run(&["--help"]));
    assert!(!help.contains("native-plugin"));
}
