#![allow(dead_code)]
pub mod fixtures;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;
use tracebench_core::engine::{Engine, EngineConfig, Launchers, TimingConfig};
use tracebench_core::tensor::DType;
use tracebench_core::trace::*;

pub const NATIVE: &str = env!("CARGO_BIN_EXE_tracebench-native-plugin");

pub fn launchers() -> Launchers {
    Launchers::default().with_native(vec![NATIVE.to_string()])
}

pub fn quick_timing() -> TimingConfig {
    TimingConfig {
        warmup: 1,
        runs: 3,
        timeout: std::time::Duration::from_secs(10),
    }
}

pub fn engine(dir: &Path, cfg: EngineConfig) -> Engine {
    Engine::new(cfg, dir.join("stage"), dir.join("data"), launchers())
}

pub fn def(name: &str, op: OpType, axes: &[(&str, Option<u64>)], inputs: &[(&str, &[&str], DType)], outputs: &[(&str, &[&str], DType)]) -> DefinitionRecord {
    DefinitionRecord {
        name: name.into(),
        description: String::new(),
        op_type: op,
        tags: vec![],
        axes: axes
            .iter()
            .map(|(n, v)| (n.to_string(), v.map(AxisSpec::constant).unwrap_or_else(AxisSpec::var)))
            .collect(),
        constraints: vec![],
        inputs: inputs.iter().map(|(n, s, d)| (n.to_string(), TensorSpec::new(s, *d))).collect(),
        outputs: outputs.iter().map(|(n, s, d)| (n.to_string(), TensorSpec::new(s, *d))).collect(),
        reference: String::new(),
    }
}

pub fn gemm_def(n: u64, k: u64) -> DefinitionRecord {
    def(
        &format!("gemm_n{n}_k{k}"),
        OpType::Gemm,
        &[("M", None), ("N", Some(n)), ("K", Some(k))],
        &[("A", &["M", "K"], DType::F16), ("B", &["N", "K"], DType::F16)],
        &[("C", &["M", "N"], DType::F16)],
    )
}

pub fn rmsnorm_def(hidden: u64) -> DefinitionRecord {
    def(
        &format!("fused_add_rmsnorm_h{hidden}"),
        OpType::FusedAddRmsnorm,
        &[("batch_size", None), ("hidden_size", Some(hidden))],
        &[
            ("x", &["batch_size", "hidden_size"], DType::F32),
            ("residual", &["batch_size", "hidden_size"], DType::F32),
            ("weight", &["hidden_size"], DType::F32),
            ("eps", &[], DType::F32),
        ],
        &[
            ("y", &["batch_size", "hidden_size"], DType::F32),
            ("new_residual", &["batch_size", "hidden_size"], DType::F32),
        ],
    )
}

pub fn sampling_def(vocab: u64) -> DefinitionRecord {
    def(
        &format!("top_k_top_p_sampling_v{vocab}"),
        OpType::SamplingTopKTopP,
        &[("batch_size", None), ("vocab_size", Some(vocab))],
        &[
            ("probs", &["batch_size", "vocab_size"], DType::F32),
            ("top_k", &[], DType::I32),
            ("top_p", &[], DType::F32),
        ],
        &[("samples", &["batch_size"], DType::I64)],
    )
}

pub fn random_workload(uuid: &str, d: &DefinitionRecord, axes: &[(&str, i64)]) -> WorkloadRecord {
    WorkloadRecord {
        uuid: uuid.into(),
        axes: axes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        inputs: d.inputs.keys().map(|k| (k.clone(), InputSpec::Random { seed: None })).collect(),
    }
}

/// A solution served by the native plugin binary.
pub fn native_solution(name: &str, definition: &str, author: &str, symbol: &str, params: serde_json::Value) -> SolutionRecord {
    SolutionRecord {
        name: name.into(),
        definition: definition.into(),
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

pub fn no_params() -> serde_json::Value {
    json!({})
}

pub fn passed(r: &EvaluationRecord) -> bool {
    r.status == EvalStatus::Passed
}

pub fn axes(pairs: &[(&str, i64)]) -> BTreeMap<String, i64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
