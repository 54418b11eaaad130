//! A dataset directory: definitions, solutions, workloads and evaluation traces.
//!
//! Layout written by this crate:
//!
//! ```text
//! definitions/<name>.json
//! solutions/<definition>/<name>.json
//! workloads/<definition>/<uuid>.json
//! traces/<definition>/<solution>/<uuid>-<NNN>.json
//! ```
//!
//! Loading does not depend on the layout: every `*.json` file below the root
//! is parsed and classified by its content.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::parse::{
    check_workload_against, parse_document, serialize_definition, serialize_solution, serialize_trace,
    Document,
};
use super::types::*;
use super::TraceError;

/// One problem found while loading a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub file: PathBuf,
    pub path: String,
    pub reason: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}: {}", self.file.display(), self.reason)
        } else {
            write!(f, "{}: {}: {}", self.file.display(), self.path, self.reason)
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoredTrace {
    pub file: PathBuf,
    pub trace: TraceRecord,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    root: PathBuf,
    pub definitions: BTreeMap<String, DefinitionRecord>,
    pub solutions: BTreeMap<String, SolutionRecord>,
    pub traces: Vec<StoredTrace>,
}

impl Dataset {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Dataset {
            root: root.into(),
            ..Default::default()
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Parses every document below `root`. Invalid documents are reported and skipped.
    pub fn load(root: impl AsRef<Path>) -> io::Result<(Dataset, Vec<Violation>)> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("dataset directory {} not found", root.display()),
            ));
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "json") {
                files.push(entry.into_path());
            }
        }

        let mut ds = Dataset::empty(root);
        let mut violations = Vec::new();
        let mut pending = Vec::new();
        for file in files {
            let text = fs::read_to_string(&file)?;
            let rel = file.strip_prefix(root).unwrap_or(&file).to_path_buf();
            match parse_document(&text) {
                Ok(Document::Definition(d)) => {
                    if ds.definitions.contains_key(&d.name) {
                        violations.push(violation(&rel, "name", format!("duplicate definition `{}`", d.name)));
                    } else {
                        ds.definitions.insert(d.name.clone(), d);
                    }
                }
                Ok(Document::Solution(s)) => {
                    if ds.solutions.contains_key(&s.name) {
                        violations.push(violation(&rel, "name", format!("duplicate solution `{}`", s.name)));
                    } else {
                        ds.solutions.insert(s.name.clone(), s);
                    }
                }
                Ok(Document::Trace(t)) => pending.push((rel, t)),
                Err(e) => violations.push(from_error(&rel, e)),
            }
        }

        for (name, s) in &ds.solutions {
            if !ds.definitions.contains_key(&s.definition) {
                violations.push(violation(
                    Path::new(&format!("solution:{name}")),
                    "definition",
                    format!("unknown definition `{}`", s.definition),
                ));
            }
        }
        for (file, trace) in pending {
            match ds.check_trace(&trace) {
                Ok(()) => ds.traces.push(StoredTrace { file, trace }),
                Err(e) => violations.push(from_error(&file, e)),
            }
        }
        Ok((ds, violations))
    }

    fn check_trace(&self, t: &TraceRecord) -> Result<(), TraceError> {
        let d = self.resolve_definition(t).ok_or_else(|| TraceError::Schema {
            path: "definition".into(),
            reason: format!("unknown definition `{}`", t.definition.name()),
        })?;
        check_workload_against(d, &t.workload, "workload")?;
        if let Some(SolutionRef::Name(n)) = &t.solution {
            let s = self.solutions.get(n).ok_or_else(|| TraceError::Schema {
                path: "solution".into(),
                reason: format!("unknown solution `{n}`"),
            })?;
            if s.definition != d.name {
                return Err(TraceError::Schema {
                    path: "solution".into(),
                    reason: format!("solution `{n}` targets `{}`", s.definition),
                });
            }
        }
        Ok(())
    }

    /// By-name lookup, with an inline definition taking precedence.
    pub fn resolve_definition<'a>(&'a self, t: &'a TraceRecord) -> Option<&'a DefinitionRecord> {
        match &t.definition {
            DefinitionRef::Inline(d) => Some(d),
            DefinitionRef::Name(n) => self.definitions.get(n),
        }
    }

    pub fn resolve_solution<'a>(&'a self, t: &'a TraceRecord) -> Option<&'a SolutionRecord> {
        match t.solution.as_ref()? {
            SolutionRef::Inline(s) => Some(s),
            SolutionRef::Name(n) => self.solutions.get(n),
        }
    }

    /// Distinct workloads for a definition, first occurrence wins per uuid.
    pub fn workloads(&self, definition: &str) -> Vec<&WorkloadRecord> {
        let mut seen = BTreeSet::new();
        self.traces
            .iter()
            .filter(|st| st.trace.definition.name() == definition)
            .map(|st| &st.trace.workload)
            .filter(|w| seen.insert(w.uuid.as_str()))
            .collect()
    }

    pub fn solutions_for(&self, definition: &str) -> impl Iterator<Item = &SolutionRecord> {
        let definition = definition.to_string();
        self.solutions.values().filter(move |s| s.definition == definition)
    }

    /// Traces that carry an evaluation.
    pub fn evaluations(&self) -> impl Iterator<Item = &TraceRecord> {
        self.traces
            .iter()
            .map(|st| &st.trace)
            .filter(|t| t.evaluation.is_some() && t.solution.is_some())
    }

    pub fn write_definition(&mut self, d: &DefinitionRecord) -> io::Result<PathBuf> {
        let path = self.root.join("definitions").join(format!("{}.json", file_stem(&d.name)));
        write_new(&path, &serialize_definition(d))?;
        self.definitions.insert(d.name.clone(), d.clone());
        Ok(path)
    }

    pub fn write_solution(&mut self, s: &SolutionRecord) -> io::Result<PathBuf> {
        let path = self
            .root
            .join("solutions")
            .join(file_stem(&s.definition))
            .join(format!("{}.json", file_stem(&s.name)));
        write_new(&path, &serialize_solution(s))?;
        self.solutions.insert(s.name.clone(), s.clone());
        Ok(path)
    }

    pub fn write_workload(&mut self, definition: &str, w: &WorkloadRecord) -> io::Result<PathBuf> {
        let path = self
            .root
            .join("workloads")
            .join(file_stem(definition))
            .join(format!("{}.json", file_stem(&w.uuid)));
        let t = TraceRecord::workload_only(definition, w.clone());
        write_new(&path, &serialize_trace(&t))?;
        self.traces.push(StoredTrace {
            file: path.strip_prefix(&self.root).unwrap_or(&path).to_path_buf(),
            trace: t,
        });
        Ok(path)
    }

    /// Appends an evaluated trace under a fresh file name; existing files are never touched.
    pub fn append_trace(&mut self, t: &TraceRecord) -> io::Result<PathBuf> {
        let dir = self
            .root
            .join("traces")
            .join(file_stem(t.definition.name()))
            .join(file_stem(t.solution_name().unwrap_or("_")));
        fs::create_dir_all(&dir)?;
        let text = serialize_trace(t);
        for n in 0.. {
            let path = dir.join(format!("{}-{n:03}.json", file_stem(&t.workload.uuid)));
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    f.write_all(text.as_bytes())?;
                    f.write_all(b"\n")?;
                    self.traces.push(StoredTrace {
                        file: path.strip_prefix(&self.root).unwrap_or(&path).to_path_buf(),
                        trace: t.clone(),
                    });
                    return Ok(path);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
        unreachable!()
    }
}

/// Keeps one workload per distinct var-axis assignment (first wins).
pub fn dedup_workloads<'a>(d: &DefinitionRecord, workloads: &[&'a WorkloadRecord]) -> Vec<&'a WorkloadRecord> {
    let var: Vec<&str> = d.var_axes().collect();
    let mut seen = BTreeSet::new();
    workloads
        .iter()
        .copied()
        .filter(|w| seen.insert(var.iter().map(|a| w.axes.get(*a).copied()).collect::<Vec<_>>()))
        .collect()
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_new(path: &Path, text: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")
}

fn violation(file: &Path, path: &str, reason: String) -> Violation {
    Violation {
        file: file.to_path_buf(),
        path: path.to_string(),
        reason,
    }
}

fn from_error(file: &Path, e: TraceError) -> Violation {
    match e {
        TraceError::Schema { path, reason } => violation(file, &path, reason),
        TraceError::ConstraintGrammar { path, source } => violation(file, &path, source.to_string()),
    }
}
