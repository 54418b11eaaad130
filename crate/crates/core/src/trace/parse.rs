//! Parsing with field-path diagnostics and canonical serialization.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::constraint::ConstraintExpr;
use super::types::*;
use super::TraceError;

#[derive(Deserialize)]
struct RawDefinition {
    name: String,
    #[serde(default)]
    description: String,
    op_type: OpType,
    #[serde(default)]
    tags: Vec<String>,
    axes: BTreeMap<String, AxisSpec>,
    #[serde(default)]
    constraints: Vec<String>,
    inputs: IndexMap<String, TensorSpec>,
    outputs: IndexMap<String, TensorSpec>,
    reference: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInputSpec {
    #[serde(rename = "type")]
    kind: String,
    seed: Option<u64>,
    path: Option<String>,
    tensor_key: Option<String>,
    value: Option<f64>,
}

#[derive(Deserialize)]
struct RawWorkload {
    uuid: String,
    axes: BTreeMap<String, i64>,
    inputs: BTreeMap<String, RawInputSpec>,
}

#[derive(Deserialize)]
struct RawSolution {
    name: String,
    definition: String,
    author: String,
    #[serde(default)]
    description: Option<String>,
    spec: BuildSpec,
    sources: Vec<SourceFile>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDefinitionRef {
    Name(String),
    Inline(Box<RawDefinition>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSolutionRef {
    Name(String),
    Inline(Box<RawSolution>),
}

#[derive(Deserialize)]
struct RawTrace {
    definition: RawDefinitionRef,
    workload: RawWorkload,
    #[serde(default)]
    solution: Option<RawSolutionRef>,
    #[serde(default)]
    evaluation: Option<EvaluationRecord>,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> TraceError {
    TraceError::Schema {
        path: path.into(),
        reason: reason.into(),
    }
}

fn join(prefix: &str, rest: &str) -> String {
    match (prefix.is_empty(), rest.is_empty()) {
        (true, _) => rest.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{rest}"),
    }
}

fn deserialize<T: DeserializeOwned>(text: &str) -> Result<T, TraceError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        schema(path, e.into_inner().to_string())
    })
}

impl RawDefinition {
    fn validate(self, prefix: &str) -> Result<DefinitionRecord, TraceError> {
        for (name, axis) in &self.axes {
            match (axis.kind, axis.value) {
                (AxisKind::Const, None) => {
                    return Err(schema(join(prefix, &format!("axes.{name}.value")), "const axis requires a value"))
                }
                (AxisKind::Var, Some(_)) => {
                    return Err(schema(join(prefix, &format!("axes.{name}.value")), "var axis must not carry a value"))
                }
                _ => {}
            }
        }
        for (section, specs) in [("inputs", &self.inputs), ("outputs", &self.outputs)] {
            for (tname, spec) in specs {
                if let Some(bad) = spec.shape.iter().find(|a| !self.axes.contains_key(*a)) {
                    return Err(schema(
                        join(prefix, &format!("{section}.{tname}.shape")),
                        format!("undeclared axis `{bad}`"),
                    ));
                }
            }
        }
        if self.outputs.is_empty() {
            return Err(schema(join(prefix, "outputs"), "at least one output is required"));
        }
        if let Some(dup) = self.outputs.keys().find(|k| self.inputs.contains_key(*k)) {
            return Err(schema(join(prefix, &format!("outputs.{dup}")), "name duplicates an input"));
        }
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (i, text) in self.constraints.iter().enumerate() {
            let path = join(prefix, &format!("constraints[{i}]"));
            let c = ConstraintExpr::parse(text).map_err(|source| TraceError::ConstraintGrammar {
                path: path.clone(),
                source,
            })?;
            if let Some(bad) = c.axes().into_iter().find(|a| !self.axes.contains_key(*a)) {
                return Err(schema(path, format!("undeclared axis `{bad}`")));
            }
            for t in c.tensors() {
                match self.inputs.get(t) {
                    Some(spec) if spec.dtype.is_int() => {}
                    Some(_) => return Err(schema(path, format!("indexed input `{t}` is not integer-typed"))),
                    None => return Err(schema(path, format!("undeclared input `{t}`"))),
                }
            }
            constraints.push(c);
        }
        Ok(DefinitionRecord {
            name: self.name,
            description: self.description,
            op_type: self.op_type,
            tags: self.tags,
            axes: self.axes,
            constraints,
            inputs: self.inputs,
            outputs: self.outputs,
            reference: self.reference,
        })
    }
}

impl RawInputSpec {
    fn validate(self, path: &str) -> Result<InputSpec, TraceError> {
        let fields: Vec<&str> = [
            ("seed", self.seed.is_some()),
            ("path", self.path.is_some()),
            ("tensor_key", self.tensor_key.is_some()),
            ("value", self.value.is_some()),
        ]
        .into_iter()
        .filter_map(|(name, set)| set.then_some(name))
        .collect();
        let only = |allowed: &[&str]| -> Result<(), TraceError> {
            match fields.iter().find(|f| !allowed.contains(f)) {
                Some(f) => Err(schema(format!("{path}.{f}"), format!("not allowed for `{}` inputs", self.kind))),
                None => Ok(()),
            }
        };
        match self.kind.as_str() {
            "random" => {
                only(&["seed"])?;
                Ok(InputSpec::Random { seed: self.seed })
            }
            "safetensors" | "archive" => {
                only(&["path", "tensor_key"])?;
                match (self.path, self.tensor_key) {
                    (Some(p), Some(k)) => Ok(InputSpec::Archive { path: p, tensor_key: k }),
                    (None, _) => Err(schema(format!("{path}.path"), "required for archive inputs")),
                    (_, None) => Err(schema(format!("{path}.tensor_key"), "required for archive inputs")),
                }
            }
            "scalar" => {
                only(&["value"])?;
                self.value
                    .map(|value| InputSpec::Scalar { value })
                    .ok_or_else(|| schema(format!("{path}.value"), "required for scalar inputs"))
            }
            other => Err(schema(format!("{path}.type"), format!("unknown input kind `{other}`"))),
        }
    }
}

impl RawWorkload {
    fn validate(self, prefix: &str) -> Result<WorkloadRecord, TraceError> {
        if let Some((k, v)) = self.axes.iter().find(|(_, v)| **v < 0) {
            return Err(schema(join(prefix, &format!("axes.{k}")), format!("negative axis value {v}")));
        }
        let mut inputs = BTreeMap::new();
        for (name, raw) in self.inputs {
            let spec = raw.validate(&join(prefix, &format!("inputs.{name}")))?;
            inputs.insert(name, spec);
        }
        Ok(WorkloadRecord {
            uuid: self.uuid,
            axes: self.axes,
            inputs,
        })
    }
}

impl RawSolution {
    fn validate(self, prefix: &str) -> Result<SolutionRecord, TraceError> {
        let sol = SolutionRecord {
            name: self.name,
            definition: self.definition,
            author: self.author,
            description: self.description,
            spec: self.spec,
            sources: self.sources,
        };
        let path = join(prefix, "spec.entry_point");
        let (file, symbol) = sol
            .entry()
            .ok_or_else(|| schema(&path, "expected `file::symbol`"))?;
        if file.is_empty() || symbol.is_empty() {
            return Err(schema(path, "expected `file::symbol`"));
        }
        if !sol.sources.iter().any(|s| s.path == file) {
            return Err(schema(path, format!("entry file `{file}` not among sources")));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in sol.sources.iter().enumerate() {
            if !seen.insert(&s.path) {
                return Err(schema(join(prefix, &format!("sources[{i}].path")), "duplicate source path"));
            }
        }
        Ok(sol)
    }
}

fn validate_evaluation(e: &EvaluationRecord, prefix: &str) -> Result<(), TraceError> {
    if e.status.is_passed() {
        let perf = e
            .performance
            .as_ref()
            .ok_or_else(|| schema(join(prefix, "performance"), "required when status is PASSED"))?;
        if e.correctness.is_none() {
            return Err(schema(join(prefix, "correctness"), "required when status is PASSED"));
        }
        let expected = perf.reference_latency_ms / perf.latency_ms;
        let ok = perf.latency_ms > 0.0
            && (perf.speedup_factor - expected).abs() <= 1e-9 * expected.abs().max(1e-300);
        if !ok {
            return Err(schema(
                join(prefix, "performance.speedup_factor"),
                format!("expected reference_latency_ms / latency_ms = {expected}"),
            ));
        }
    }
    Ok(())
}

/// Checks that a workload binds exactly the var axes of `d` and covers its inputs.
pub fn check_workload_against(d: &DefinitionRecord, w: &WorkloadRecord, prefix: &str) -> Result<(), TraceError> {
    for (name, axis) in &d.axes {
        match (axis.kind, w.axes.contains_key(name)) {
            (AxisKind::Var, false) => {
                return Err(schema(join(prefix, &format!("axes.{name}")), "var axis not assigned"))
            }
            (AxisKind::Const, true) => {
                return Err(schema(join(prefix, &format!("axes.{name}")), "const axis must not be assigned"))
            }
            _ => {}
        }
    }
    if let Some(extra) = w.axes.keys().find(|k| !d.axes.contains_key(*k)) {
        return Err(schema(join(prefix, &format!("axes.{extra}")), "unknown axis"));
    }
    if let Some(missing) = d.inputs.keys().find(|k| !w.inputs.contains_key(*k)) {
        return Err(schema(join(prefix, &format!("inputs.{missing}")), "input not covered by workload"));
    }
    if let Some(extra) = w.inputs.keys().find(|k| !d.inputs.contains_key(*k)) {
        return Err(schema(join(prefix, &format!("inputs.{extra}")), "unknown input"));
    }
    Ok(())
}

pub fn parse_definition(text: &str) -> Result<DefinitionRecord, TraceError> {
    deserialize::<RawDefinition>(text)?.validate("")
}

pub fn parse_solution(text: &str) -> Result<SolutionRecord, TraceError> {
    deserialize::<RawSolution>(text)?.validate("")
}

/// Parses and validates a trace document.
pub fn parse_trace(text: &str) -> Result<TraceRecord, TraceError> {
    let raw: RawTrace = deserialize(text)?;
    let definition = match raw.definition {
        RawDefinitionRef::Name(n) => DefinitionRef::Name(n),
        RawDefinitionRef::Inline(d) => DefinitionRef::Inline(Box::new(d.validate("definition")?)),
    };
    let workload = raw.workload.validate("workload")?;
    if let DefinitionRef::Inline(d) = &definition {
        check_workload_against(d, &workload, "workload")?;
    }
    let solution = match raw.solution {
        None => None,
        Some(RawSolutionRef::Name(n)) => Some(SolutionRef::Name(n)),
        Some(RawSolutionRef::Inline(s)) => Some(SolutionRef::Inline(Box::new(s.validate("solution")?))),
    };
    if let Some(e) = &raw.evaluation {
        validate_evaluation(e, "evaluation")?;
    }
    Ok(TraceRecord {
        definition,
        workload,
        solution,
        evaluation: raw.evaluation,
    })
}

/// Any document found in a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Definition(DefinitionRecord),
    Solution(SolutionRecord),
    Trace(TraceRecord),
}

pub fn parse_document(text: &str) -> Result<Document, TraceError> {
    let probe: Value = serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
    let obj = probe
        .as_object()
        .ok_or_else(|| schema("", "document must be a JSON object"))?;
    if obj.contains_key("workload") {
        parse_trace(text).map(Document::Trace)
    } else if obj.contains_key("op_type") {
        parse_definition(text).map(Document::Definition)
    } else if obj.contains_key("sources") || obj.contains_key("spec") {
        parse_solution(text).map(Document::Solution)
    } else {
        Err(schema("", "not a definition, solution or trace document"))
    }
}

/// Canonical JSON: sorted keys, except definition `inputs`/`outputs` which keep
/// declaration order. Floats use shortest round-trip decimal form.
pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("records serialize to JSON");
    serde_json::to_string_pretty(&canonicalize(v, false)).expect("JSON values serialize")
}

fn canonicalize(v: Value, keep_order: bool) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            if !keep_order {
                entries.sort_by(|a, b| a.0.cmp(&b.0));
            }
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, child)| {
                        let keep = !keep_order && (k == "inputs" || k == "outputs");
                        (k, canonicalize(child, keep))
                    })
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|i| canonicalize(i, false)).collect()),
        other => other,
    }
}

pub fn serialize_trace(t: &TraceRecord) -> String {
    to_canonical_string(t)
}

pub fn serialize_definition(d: &DefinitionRecord) -> String {
    to_canonical_string(d)
}

pub fn serialize_solution(s: &SolutionRecord) -> String {
    to_canonical_string(s)
}
