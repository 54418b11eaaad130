//! Workers: an exclusive FIFO device lock plus cached plugin processes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::path::PathBuf;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::process::PluginProcess;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerState {
    Idle,
    Busy,
    Dead,
}

/// Ticket lock: waiters are served strictly in arrival order. With a lock
/// file, the holder also takes an exclusive OS file lock so separate
/// processes sharing the device serialize too.
#[derive(Debug)]
pub struct DeviceLock {
    tickets: Mutex<(u64, u64)>,
    turn: Condvar,
    file: Option<PathBuf>,
}

pub struct DeviceGuard<'a> {
    lock: &'a DeviceLock,
    _file: Option<File>,
}

impl DeviceLock {
    pub fn new(file: Option<PathBuf>) -> Self {
        DeviceLock {
            tickets: Mutex::new((0, 0)),
            turn: Condvar::new(),
            file,
        }
    }

    pub fn acquire(&self) -> DeviceGuard<'_> {
        let mut t = self.tickets.lock().unwrap_or_else(|e| e.into_inner());
        let mine = t.0;
        t.0 += 1;
        while t.1 != mine {
            t = self.turn.wait(t).unwrap_or_else(|e| e.into_inner());
        }
        drop(t);
        let file = self.file.as_ref().and_then(|p| {
            let f = OpenOptions::new().create(true).truncate(false).write(true).open(p).ok()?;
            f.lock().ok()?;
            Some(f)
        });
        DeviceGuard { lock: self, _file: file }
    }
}

impl Drop for DeviceGuard<'_> {
    fn drop(&mut self) {
        let mut t = self.lock.tickets.lock().unwrap_or_else(|e| e.into_inner());
        t.1 += 1;
        self.lock.turn.notify_all();
    }
}

#[derive(Debug, Default)]
pub(crate) struct WorkerInner {
    pub state: Option<WorkerState>,
    pub processes: HashMap<String, PluginProcess>,
    /// Solution hashes bootstrapped since the worker was created.
    pub warm: BTreeSet<String>,
    /// Definitions whose reference outputs this worker has evaluated against.
    pub resident: BTreeSet<String>,
    pub runtime: BTreeMap<String, String>,
    pub pending_kill: bool,
    pub spawned: u64,
}

/// One execution slot (the desk-scale stand-in for a GPU).
#[derive(Debug)]
pub struct WorkerHandle {
    id: String,
    lock: DeviceLock,
    prewarmed: bool,
    inner: Mutex<WorkerInner>,
}

impl WorkerHandle {
    pub fn new(id: impl Into<String>) -> Self {
        Self::build(id.into(), None, false)
    }

    pub fn with_lock_file(id: impl Into<String>, lock_file: PathBuf) -> Self {
        Self::build(id.into(), Some(lock_file), false)
    }

    /// A spare, marked as pre-warmed.
    pub fn spare(id: impl Into<String>) -> Self {
        Self::build(id.into(), None, true)
    }

    fn build(id: String, file: Option<PathBuf>, prewarmed: bool) -> Self {
        WorkerHandle {
            id,
            lock: DeviceLock::new(file),
            prewarmed,
            inner: Mutex::new(WorkerInner {
                state: Some(WorkerState::Idle),
                ..Default::default()
            }),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn prewarmed(&self) -> bool {
        self.prewarmed
    }

    pub(crate) fn inner(&self) -> MutexGuard<'_, WorkerInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn acquire(&self) -> DeviceGuard<'_> {
        self.lock.acquire()
    }

    pub fn state(&self) -> WorkerState {
        self.inner().state.unwrap_or(WorkerState::Idle)
    }

    pub(crate) fn set_state(&self, s: WorkerState) {
        let mut i = self.inner();
        if i.state != Some(WorkerState::Dead) {
            i.state = Some(s);
        }
    }

    pub fn is_dead(&self) -> bool {
        self.state() == WorkerState::Dead
    }

    pub fn has_warm(&self, solution_hash: &str) -> bool {
        self.inner().warm.contains(solution_hash)
    }

    pub fn has_resident(&self, definition: &str) -> bool {
        self.inner().resident.contains(definition)
    }

    pub fn warm_set(&self) -> BTreeSet<String> {
        self.inner().warm.clone()
    }

    pub fn resident_set(&self) -> BTreeSet<String> {
        self.inner().resident.clone()
    }

    /// Number of plugin processes started on this worker.
    pub fn spawn_count(&self) -> u64 {
        self.inner().spawned
    }

    /// Kills the worker at its next plugin interaction: the process in use
    /// dies mid-request and the worker is marked dead.
    pub fn inject_kill(&self) {
        self.inner().pending_kill = true;
    }

    /// Clears and returns the pending kill flag.
    pub fn take_pending_kill(&self) -> bool {
        std::mem::take(&mut self.inner().pending_kill)
    }

    /// Marks the worker dead and kills its processes immediately.
    pub fn kill(&self) {
        let mut i = self.inner();
        i.state = Some(WorkerState::Dead);
        for (_, mut p) in i.processes.drain() {
            p.kill();
        }
    }

    /// PING every cached process; dead ones are dropped. A dead worker stays dead.
    pub fn health_check(&self, timeout: Duration) -> bool {
        let mut i = self.inner();
        if i.state == Some(WorkerState::Dead) {
            return false;
        }
        i.processes.retain(|_, p| p.ping(timeout));
        true
    }

    /// Sends BYE to every cached process.
    pub fn shutdown(&self) {
        let procs: Vec<_> = self.inner().processes.drain().map(|(_, p)| p).collect();
        for p in procs {
            p.shutdown();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
