use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ApplyConfig, DispatchError};
use crate::trace::{Dataset, EvalStatus};

pub const INDEX_VERSION: u32 = 1;

/// Smallest power of two at or above `v`; non-positive values map to 1.
pub fn bucket(v: i64) -> u64 {
    if v <= 1 {
        1
    } else {
        (v as u64).next_power_of_two()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DispatchKey {
    pub definition: String,
    /// Bucketed values, aligned with the index's feature axes for the definition.
    pub buckets: Vec<u64>,
}

impl DispatchKey {
    /// `None` when a feature axis is missing from `axes`.
    pub fn new(definition: &str, feature_axes: &[String], axes: &BTreeMap<String, i64>) -> Option<Self> {
        let buckets = feature_axes
            .iter()
            .map(|a| axes.get(a).map(|&v| bucket(v)))
            .collect::<Option<Vec<_>>>()?;
        Some(DispatchKey {
            definition: definition.to_string(),
            buckets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    Aot,
    Jit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub solution: String,
    /// Mean latency over the solution's evaluations under this key.
    pub latency_ms: f64,
    pub bootstrap: Bootstrap,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub error_threshold: Option<f64>,
    pub aot_ratio: f64,
    /// SHA-256 over the evaluations the index was built from.
    pub dataset_hash: String,
}

/// One evaluation as the index builder sees it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSample {
    pub definition: String,
    pub axes: BTreeMap<String, i64>,
    pub solution: String,
    pub status: EvalStatus,
    pub latency_ms: Option<f64>,
    pub max_relative_error: Option<f64>,
}

/// Samples for every resolvable evaluation, plus each definition's var axes.
pub fn samples_from_dataset(ds: &Dataset) -> (Vec<IndexSample>, BTreeMap<String, Vec<String>>) {
    let mut features = BTreeMap::new();
    let samples = ds
        .evaluations()
        .filter_map(|t| {
            let e = t.evaluation.as_ref()?;
            if let Some(d) = ds.resolve_definition(t) {
                features
                    .entry(d.name.clone())
                    .or_insert_with(|| d.var_axes().map(str::to_string).collect());
            }
            Some(IndexSample {
                definition: t.definition.name().to_string(),
                axes: t.workload.axes.clone(),
                solution: t.solution_name()?.to_string(),
                status: e.status,
                latency_ms: e.performance.as_ref().map(|p| p.latency_ms),
                max_relative_error: e.correctness.as_ref().map(|c| c.max_relative_error),
            })
        })
        .collect();
    (samples, features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchIndex {
    pub version: u32,
    pub meta: IndexMeta,
    /// Feature axes per definition, in key order.
    pub features: BTreeMap<String, Vec<String>>,
    #[serde(with = "entry_list")]
    pub entries: BTreeMap<DispatchKey, IndexEntry>,
}

mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        key: DispatchKey,
        #[serde(flatten)]
        entry: IndexEntry,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<DispatchKey, IndexEntry>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Row> = m
            .iter()
            .map(|(k, e)| Row {
                key: k.clone(),
                entry: e.clone(),
            })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<DispatchKey, IndexEntry>, D::Error> {
        Ok(Vec::<Row>::deserialize(d)?.into_iter().map(|r| (r.key, r.entry)).collect())
    }
}

impl DispatchIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn require_entries(&self) -> Result<&Self, DispatchError> {
        if self.is_empty() {
            Err(DispatchError::EmptyDataset)
        } else {
            Ok(self)
        }
    }

    pub fn lookup(&self, definition: &str, axes: &BTreeMap<String, i64>) -> Option<&IndexEntry> {
        let key = DispatchKey::new(definition, self.features.get(definition)?, axes)?;
        self.entries.get(&key)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DispatchError> {
        let idx: DispatchIndex = serde_json::from_str(text).map_err(|e| DispatchError::Document(e.to_string()))?;
        if idx.version != INDEX_VERSION {
            return Err(DispatchError::Document(format!(
                "index version {} is not supported (expected {INDEX_VERSION})",
                idx.version
            )));
        }
        Ok(idx)
    }

    pub fn save(&self, path: &Path) -> Result<(), DispatchError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DispatchError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn accepted(s: &IndexSample, threshold: Option<f64>) -> bool {
    s.status == EvalStatus::Passed
        && s.latency_ms.is_some_and(|l| l.is_finite() && l > 0.0)
        && match threshold {
            None => true,
            Some(t) => s.max_relative_error.is_some_and(|e| e <= t),
        }
}

fn dataset_hash(samples: &[IndexSample]) -> String {
    let mut lines: Vec<String> = samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serializes"))
        .collect();
    lines.sort();
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Selects the fastest accepted solution per key. A solution with any rejected
/// evaluation under a key does not compete for that key.
pub fn build_index(samples: &[IndexSample], definition_axes: &BTreeMap<String, Vec<String>>, cfg: &ApplyConfig) -> Result<DispatchIndex, DispatchError> {
    cfg.validate()?;
    let mut features: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in samples {
        features.entry(s.definition.clone()).or_insert_with(|| {
            cfg.feature_axes
                .get(&s.definition)
                .or_else(|| definition_axes.get(&s.definition))
                .cloned()
                .unwrap_or_else(|| s.axes.keys().cloned().collect())
        });
    }

    // key -> solution -> (latencies, rejected)
    let mut groups: BTreeMap<DispatchKey, BTreeMap<&str, (Vec<f64>, bool)>> = BTreeMap::new();
    for s in samples {
        let Some(key) = DispatchKey::new(&s.definition, &features[&s.definition], &s.axes) else {
            continue;
        };
        let slot = groups.entry(key).or_default().entry(&s.solution).or_default();
        if accepted(s, cfg.error_threshold) {
            slot.0.push(s.latency_ms.expect("accepted samples have latency"));
        } else {
            slot.1 = true;
        }
    }

    let mut entries = BTreeMap::new();
    for (key, by_solution) in groups {
        let best = by_solution
            .into_iter()
            .filter(|(_, (lat, rejected))| !rejected && !lat.is_empty())
            .map(|(name, (mut lat, _))| {
                // Sum in sorted order so the mean ignores input order.
                lat.sort_by(f64::total_cmp);
                (name, lat.iter().sum::<f64>() / lat.len() as f64, lat.len())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        if let Some((name, latency_ms, n)) = best {
            entries.insert(
                key,
                IndexEntry {
                    solution: name.to_string(),
                    latency_ms,
                    bootstrap: Bootstrap::Jit,
                    evaluations: n,
                },
            );
        }
    }

    let mut selections: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entries.values() {
        *selections.entry(e.solution.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = selections.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n_aot = (cfg.aot_ratio * ranked.len() as f64).ceil() as usize;
    let aot: BTreeSet<String> = ranked.iter().take(n_aot).map(|(n, _)| n.to_string()).collect();
    for e in entries.values_mut() {
        if aot.contains(&e.solution) {
            e.bootstrap = Bootstrap::Aot;
        }
    }

    features.retain(|d, _| entries.keys().any(|k| &k.definition == d));
    Ok(DispatchIndex {
        version: INDEX_VERSION,
        meta: IndexMeta {
            error_threshold: cfg.error_threshold,
            aot_ratio: cfg.aot_ratio,
            dataset_hash: dataset_hash(samples),
        },
        features,
        entries,
    })
}
