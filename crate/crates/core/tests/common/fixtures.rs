use std::path::PathBuf;

use serde_json::Value;

pub const FIXTURES: [&str; 8] = [
    "gemm_definition",
    "gemm_solution",
    "gemm_workload",
    "gemm_trace",
    "gqa_definition",
    "gqa_solution",
    "gqa_workload",
    "gqa_trace",
];

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/traces")
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(format!("{name}.json"))).unwrap()
}

fn is_default(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        Value::String(s) => s.is_empty(),
        _ => false,
    }
}

/// Same meaning: numbers compare by value, and keys present on only one side
/// must hold a default (null, empty).
pub fn same_semantics(a: &Value, b: &Value) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x == y).then_some(()).ok_or(format!("{x} != {y}"))
        }
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => same_semantics(v, w).map_err(|e| format!("{k}.{e}"))?,
                    None if is_default(v) => {}
                    None => return Err(format!("{k} missing on the right")),
                }
            }
            for (k, w) in y {
                if !x.contains_key(k) && !is_default(w) {
                    return Err(format!("{k} missing on the left"));
                }
            }
            Ok(())
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("array lengths {} != {}", x.len(), y.len()));
            }
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                same_semantics(v, w).map_err(|e| format!("[{i}].{e}"))?;
            }
            Ok(())
        }
        _ => (a == b).then_some(()).ok_or(format!("{a} != {b}")),
    }
}
