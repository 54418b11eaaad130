//! Staging solution sources into content-addressed sandboxes and building
//! the launch command for a solution's language.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::trace::SolutionRecord;

const COMPLETE_MARKER: &str = ".staged";

/// A solution's sources written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedSolution {
    pub hash: String,
    pub dir: PathBuf,
    pub file: PathBuf,
    pub symbol: String,
    /// False when the sandbox already existed.
    pub fresh: bool,
}

/// Content hash over language, entry point and sources.
pub fn solution_hash(s: &SolutionRecord) -> String {
    let mut h = Sha256::new();
    for part in [s.spec.language.as_str(), s.spec.entry_point.as_str()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let mut sources: Vec<_> = s.sources.iter().collect();
    sources.sort_by(|a, b| a.path.cmp(&b.path));
    for src in sources {
        for part in [src.path.as_str(), src.content.as_str()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

fn safe_relative(p: &str) -> bool {
    let path = Path::new(p);
    !p.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Persistent, content-addressed sandbox directory.
#[derive(Debug, Clone)]
pub struct Stager {
    root: PathBuf,
}

impl Stager {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Stager { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, s: &SolutionRecord) -> Result<StagedSolution, String> {
        let (file, symbol) = s
            .entry()
            .ok_or_else(|| format!("entry point `{}` is not `file::symbol`", s.spec.entry_point))?;
        for src in &s.sources {
            if !safe_relative(&src.path) {
                return Err(format!("source path `{}` escapes the sandbox", src.path));
            }
        }
        if !s.sources.iter().any(|src| src.path == file) {
            return Err(format!("entry file `{file}` not among sources"));
        }
        let hash = solution_hash(s);
        let dir = self.root.join(&hash);
        let entry = dir.join(file);
        let staged = |fresh| StagedSolution {
            hash: hash.clone(),
            dir: dir.clone(),
            file: entry.clone(),
            symbol: symbol.to_string(),
            fresh,
        };
        if dir.join(COMPLETE_MARKER).exists() {
            return Ok(staged(false));
        }
        let io = |e: std::io::Error| format!("staging {}: {e}", dir.display());
        fs::create_dir_all(&dir).map_err(io)?;
        for src in &s.sources {
            let path = dir.join(&src.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io)?;
            }
            fs::write(&path, &src.content).map_err(io)?;
        }
        if s.spec.language == "exec" {
            make_executable(&entry).map_err(io)?;
        }
        fs::write(dir.join(COMPLETE_MARKER), b"").map_err(io)?;
        Ok(staged(true))
    }
}

#[cfg(unix)]
fn make_executable(p: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let mut perm = fs::metadata(p)?.permissions();
    perm.set_mode(perm.mode() | 0o755);
    fs::set_permissions(p, perm)
}

#[cfg(not(unix))]
fn make_executable(_: &Path) -> std::io::Result<()> {
    Ok(())
}

/// Language label → command template. `{file}`, `{dir}` and `{symbol}` are
/// substituted per solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Launchers {
    templates: BTreeMap<String, Vec<String>>,
}

impl Default for Launchers {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert("python".to_string(), vec!["python3".into(), "-u".into(), "{file}".into()]);
        templates.insert("exec".to_string(), vec!["{file}".into()]);
        Launchers { templates }
    }
}

impl Launchers {
    /// Registers the built-in native kernel host under the `native` language.
    pub fn with_native(mut self, command: Vec<String>) -> Self {
        self.templates.insert("native".into(), command);
        self
    }

    pub fn set(&mut self, language: &str, template: Vec<String>) {
        self.templates.insert(language.to_string(), template);
    }

    pub fn command(&self, language: &str, staged: &StagedSolution) -> Result<Vec<String>, String> {
        let t = self
            .templates
            .get(language)
            .ok_or_else(|| format!("no launcher for language `{language}`"))?;
        Ok(t.iter()
            .map(|a| {
                a.replace("{file}", &staged.file.to_string_lossy())
                    .replace("{dir}", &staged.dir.to_string_lossy())
                    .replace("{symbol}", &staged.symbol)
            })
            .collect())
    }
}
