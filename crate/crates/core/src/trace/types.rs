use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::constraint::ConstraintExpr;
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Const,
    Var,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    #[serde(rename = "type")]
    pub kind: AxisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl AxisSpec {
    pub fn var() -> Self {
        AxisSpec {
            kind: AxisKind::Var,
            value: None,
            description: None,
        }
    }

    pub fn constant(value: u64) -> Self {
        AxisSpec {
            kind: AxisKind::Const,
            value: Some(value),
            description: None,
        }
    }
}

/// Shape as axis names; empty means scalar (written as `null`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    #[serde(with = "scalar_shape")]
    pub shape: Vec<String>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl TensorSpec {
    pub fn new(shape: &[&str], dtype: DType) -> Self {
        TensorSpec {
            shape: shape.iter().map(|s| s.to_string()).collect(),
            dtype,
            description: None,
        }
    }
}

mod scalar_shape {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(shape: &[String], s: S) -> Result<S::Ok, S::Error> {
        if shape.is_empty() {
            s.serialize_none()
        } else {
            s.collect_seq(shape)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        Ok(Option::<Vec<String>>::deserialize(d)?.unwrap_or_default())
    }
}

/// Operator family; selects the built-in reference evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpType {
    Gemm,
    FusedAddRmsnorm,
    GqaPagedDecode,
    SamplingTopKTopP,
    Other(String),
}

impl OpType {
    pub fn as_str(&self) -> &str {
        match self {
            OpType::Gemm => "gemm",
            OpType::FusedAddRmsnorm => "fused_add_rmsnorm",
            OpType::GqaPagedDecode => "gqa_paged",
            OpType::SamplingTopKTopP => "sampling_top_k_top_p",
            OpType::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "gemm" => OpType::Gemm,
            "fused_add_rmsnorm" | "rmsnorm" => OpType::FusedAddRmsnorm,
            "gqa_paged" | "gqa_paged_decode" => OpType::GqaPagedDecode,
            "sampling_top_k_top_p" | "sampling" => OpType::SamplingTopKTopP,
            other => OpType::Other(other.to_string()),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, OpType::SamplingTopKTopP)
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for OpType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for OpType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(OpType::parse(&String::deserialize(d)?))
    }
}

/// The contract of a kernel task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefinitionRecord {
    pub name: String,
    pub description: String,
    pub op_type: OpType,
    pub tags: Vec<String>,
    pub axes: BTreeMap<String, AxisSpec>,
    pub constraints: Vec<ConstraintExpr>,
    pub inputs: IndexMap<String, TensorSpec>,
    pub outputs: IndexMap<String, TensorSpec>,
    pub reference: String,
}

impl DefinitionRecord {
    pub fn var_axes(&self) -> impl Iterator<Item = &str> {
        self.axes
            .iter()
            .filter(|(_, a)| a.kind == AxisKind::Var)
            .map(|(k, _)| k.as_str())
    }

    pub fn const_value(&self, axis: &str) -> Option<u64> {
        self.axes.get(axis).and_then(|a| a.value)
    }
}

/// Equivalence used to deduplicate collected definitions: identical I/O specs
/// and reference text, the same axes with the same const/var roles, equal
/// const values, and the same operator family. Names, tags and descriptions
/// are ignored.
pub fn definitions_equivalent(a: &DefinitionRecord, b: &DefinitionRecord) -> bool {
    fn io_eq(x: &IndexMap<String, TensorSpec>, y: &IndexMap<String, TensorSpec>) -> bool {
        x.len() == y.len()
            && x
                .iter()
                .zip(y.iter())
                .all(|((nx, sx), (ny, sy))| nx == ny && sx.shape == sy.shape && sx.dtype == sy.dtype)
    }
    a.op_type == b.op_type
        && a.reference == b.reference
        && io_eq(&a.inputs, &b.inputs)
        && io_eq(&a.outputs, &b.outputs)
        && a.axes.len() == b.axes.len()
        && a.axes.iter().all(|(name, ax)| {
            b.axes
                .get(name)
                .is_some_and(|bx| bx.kind == ax.kind && bx.value == ax.value)
        })
}

/// How one workload input is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Random { seed: Option<u64> },
    Archive { path: String, tensor_key: String },
    Scalar { value: f64 },
}

impl Serialize for InputSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(None)?;
        match self {
            InputSpec::Random { seed } => {
                m.serialize_entry("type", "random")?;
                if let Some(seed) = seed {
                    m.serialize_entry("seed", seed)?;
                }
            }
            InputSpec::Archive { path, tensor_key } => {
                m.serialize_entry("type", "safetensors")?;
                m.serialize_entry("path", path)?;
                m.serialize_entry("tensor_key", tensor_key)?;
            }
            InputSpec::Scalar { value } => {
                m.serialize_entry("type", "scalar")?;
                m.serialize_entry("value", value)?;
            }
        }
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadRecord {
    pub uuid: String,
    pub axes: BTreeMap<String, i64>,
    pub inputs: BTreeMap<String, InputSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSpec {
    pub language: String,
    #[serde(default)]
    pub target_hardware: Vec<String>,
    pub entry_point: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
}

/// A candidate implementation of a definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolutionRecord {
    pub name: String,
    pub definition: String,
    pub author: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub spec: BuildSpec,
    pub sources: Vec<SourceFile>,
}

impl SolutionRecord {
    /// `(file, symbol)` split of the entry point.
    pub fn entry(&self) -> Option<(&str, &str)> {
        self.spec.entry_point.split_once("::")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalStatus {
    Passed,
    FailedCompile,
    FailedRuntime,
    FailedCorrectness,
    Timeout,
}

impl EvalStatus {
    pub fn is_passed(self) -> bool {
        self == EvalStatus::Passed
    }
}

impl fmt::Display for EvalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalStatus::Passed => "PASSED",
            EvalStatus::FailedCompile => "FAILED_COMPILE",
            EvalStatus::FailedRuntime => "FAILED_RUNTIME",
            EvalStatus::FailedCorrectness => "FAILED_CORRECTNESS",
            EvalStatus::Timeout => "TIMEOUT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Environment {
    pub hardware: String,
    #[serde(default)]
    pub libs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    #[serde(default)]
    pub extra: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub latency_ms: f64,
    pub reference_latency_ms: f64,
    pub speedup_factor: f64,
}

impl Performance {
    pub fn new(latency_ms: f64, reference_latency_ms: f64) -> Self {
        Performance {
            latency_ms,
            reference_latency_ms,
            speedup_factor: reference_latency_ms / latency_ms,
        }
    }
}

/// Immutable verdict for one definition × solution × workload run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub status: EvalStatus,
    pub environment: Environment,
    pub timestamp: String,
    #[serde(default)]
    pub log: String,
    #[serde(default)]
    pub correctness: Option<Correctness>,
    #[serde(default)]
    pub performance: Option<Performance>,
}

impl EvaluationRecord {
    pub fn speedup(&self) -> Option<f64> {
        self.performance.as_ref().map(|p| p.speedup_factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum DefinitionRef {
    Name(String),
    Inline(Box<DefinitionRecord>),
}

impl DefinitionRef {
    pub fn name(&self) -> &str {
        match self {
            DefinitionRef::Name(n) => n,
            DefinitionRef::Inline(d) => &d.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SolutionRef {
    Name(String),
    Inline(Box<SolutionRecord>),
}

impl SolutionRef {
    pub fn name(&self) -> &str {
        match self {
            SolutionRef::Name(n) => n,
            SolutionRef::Inline(s) => &s.name,
        }
    }
}

/// The self-contained interchange unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub definition: DefinitionRef,
    pub workload: WorkloadRecord,
    pub solution: Option<SolutionRef>,
    pub evaluation: Option<EvaluationRecord>,
}

impl TraceRecord {
    pub fn workload_only(definition: &str, workload: WorkloadRecord) -> Self {
        TraceRecord {
            definition: DefinitionRef::Name(definition.to_string()),
            workload,
            solution: None,
            evaluation: None,
        }
    }

    pub fn solution_name(&self) -> Option<&str> {
        self.solution.as_ref().map(SolutionRef::name)
    }
}
