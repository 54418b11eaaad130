//! A running plugin process and the host side of the frame protocol.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::frame::*;
use crate::tensor::TensorArchive;
use crate::trace::EvalStatus;

const STDERR_CAP: usize = 64 * 1024;

/// What the host sent: frame type plus `(name, sha256)` of every tensor in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentFrame {
    pub kind: FrameType,
    pub tensors: Vec<(String, String)>,
}

pub type FrameLog = Arc<Mutex<Vec<SentFrame>>>;

pub fn tensor_digest(t: &crate::tensor::Tensor) -> String {
    let mut h = Sha256::new();
    h.update(t.dtype().archive_tag().as_bytes());
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    h.update(t.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecFailure {
    pub status: EvalStatus,
    pub detail: String,
    /// The process is gone (crash, protocol desync, timeout kill).
    pub process_lost: bool,
}

impl ExecFailure {
    fn compile(detail: impl Into<String>) -> Self {
        ExecFailure {
            status: EvalStatus::FailedCompile,
            detail: detail.into(),
            process_lost: true,
        }
    }

    fn runtime(detail: impl Into<String>, process_lost: bool) -> Self {
        ExecFailure {
            status: EvalStatus::FailedRuntime,
            detail: detail.into(),
            process_lost,
        }
    }

    fn timeout(detail: impl Into<String>) -> Self {
        ExecFailure {
            status: EvalStatus::Timeout,
            detail: detail.into(),
            process_lost: true,
        }
    }
}

pub struct PluginProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    rx: Receiver<Result<Frame, FrameError>>,
    stderr: Arc<Mutex<Vec<u8>>>,
    runtime: BTreeMap<String, String>,
    bootstrap: Duration,
    log: Option<FrameLog>,
    alive: bool,
}

impl std::fmt::Debug for PluginProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginProcess")
            .field("pid", &self.child.id())
            .field("alive", &self.alive)
            .finish()
    }
}

impl PluginProcess {
    /// Starts the process and completes the HELLO handshake.
    pub fn spawn(
        command: &[String],
        hello: &HostHello,
        cwd: &Path,
        timeout: Duration,
        log: Option<FrameLog>,
    ) -> Result<Self, ExecFailure> {
        let start = Instant::now();
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ExecFailure::compile("empty launch command"))?;
        let mut child = Command::new(program)
            .args(args)
            .current_dir(cwd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ExecFailure::compile(format!("cannot start `{program}`: {e}")))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let r = read_frame(&mut stdout);
            let stop = r.is_err();
            if tx.send(r).is_err() || stop {
                break;
            }
        });

        let stderr = Arc::new(Mutex::new(Vec::new()));
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut s = sink.lock().unwrap_or_else(|e| e.into_inner());
                s.extend_from_slice(&buf[..n]);
                if s.len() > STDERR_CAP {
                    let cut = s.len() - STDERR_CAP;
                    s.drain(..cut);
                }
            }
        });

        let mut p = PluginProcess {
            stdin: child.stdin.take(),
            child,
            rx,
            stderr,
            runtime: BTreeMap::new(),
            bootstrap: Duration::ZERO,
            log,
            alive: true,
        };
        let payload = serde_json::to_vec(hello).expect("hello serializes");
        let reply = p
            .request(Frame::new(FrameType::Hello, payload), &[], timeout)
            .map_err(|e| ExecFailure::compile(format!("bootstrap failed: {}", e.detail)))?;
        match reply.kind {
            FrameType::Hello => {
                let h: PluginHello = serde_json::from_slice(&reply.payload).unwrap_or_default();
                p.runtime = h.runtime;
            }
            FrameType::Error => {
                p.kill();
                return Err(ExecFailure::compile(format!("bootstrap rejected: {}", reply.payload_text())));
            }
            other => {
                p.kill();
                return Err(ExecFailure::compile(format!("expected HELLO, got {other:?}")));
            }
        }
        p.bootstrap = start.elapsed();
        Ok(p)
    }

    pub fn runtime(&self) -> &BTreeMap<String, String> {
        &self.runtime
    }

    /// Time from spawn to a completed handshake.
    pub fn bootstrap_time(&self) -> Duration {
        self.bootstrap
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn stderr_tail(&self) -> String {
        let s = self.stderr.lock().unwrap_or_else(|e| e.into_inner());
        String::from_utf8_lossy(&s).into_owned()
    }

    pub fn is_alive(&mut self) -> bool {
        if self.alive && !matches!(self.child.try_wait(), Ok(None)) {
            self.alive = false;
        }
        self.alive
    }

    fn lost(&mut self, detail: String) -> String {
        self.kill();
        let tail = self.stderr_tail();
        if tail.trim().is_empty() {
            detail
        } else {
            format!("{detail}\nstderr:\n{}", tail.trim_end())
        }
    }

    fn request(&mut self, frame: Frame, tensors: &[(String, String)], timeout: Duration) -> Result<Frame, ExecFailure> {
        if !self.is_alive() {
            return Err(ExecFailure::runtime("plugin process is not running", true));
        }
        if let Some(log) = &self.log {
            log.lock().unwrap_or_else(|e| e.into_inner()).push(SentFrame {
                kind: frame.kind,
                tensors: tensors.to_vec(),
            });
        }
        let stdin = self.stdin.as_mut().expect("stdin open while alive");
        if let Err(e) = write_frame(stdin, &frame) {
            let d = self.lost(format!("writing {:?} frame: {e}", frame.kind));
            return Err(ExecFailure::runtime(d, true));
        }
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(FrameError::Closed)) | Err(RecvTimeoutError::Disconnected) => {
                thread::sleep(Duration::from_millis(5));
                let code = self.child.try_wait().ok().flatten();
                let d = self.lost(format!("plugin exited unexpectedly ({code:?})"));
                Err(ExecFailure::runtime(d, true))
            }
            Ok(Err(e)) => {
                let d = self.lost(format!("protocol error: {e}"));
                Err(ExecFailure::runtime(d, true))
            }
            Err(RecvTimeoutError::Timeout) => {
                let d = self.lost(format!("no reply within {} ms", timeout.as_millis()));
                Err(ExecFailure::timeout(d))
            }
        }
    }

    /// One RUN → RESULT exchange.
    pub fn run(&mut self, inputs: &TensorArchive, trailer: &RunTrailer, timeout: Duration) -> Result<TensorArchive, ExecFailure> {
        let digests: Vec<(String, String)> = if self.log.is_some() {
            inputs.iter().map(|(n, t)| (n.to_string(), tensor_digest(t))).collect()
        } else {
            Vec::new()
        };
        let frame = Frame::new(FrameType::Run, encode_run(inputs, trailer));
        let reply = self.request(frame, &digests, timeout)?;
        match reply.kind {
            FrameType::Result => decode_result(&reply.payload).map_err(|e| {
                let d = self.lost(format!("malformed RESULT: {e}"));
                ExecFailure::runtime(d, true)
            }),
            FrameType::Error => Err(ExecFailure::runtime(format!("plugin error: {}", reply.payload_text()), false)),
            other => {
                let d = self.lost(format!("protocol error: expected RESULT, got {other:?}"));
                Err(ExecFailure::runtime(d, true))
            }
        }
    }

    /// Health check; a dead or unresponsive process returns false.
    pub fn ping(&mut self, timeout: Duration) -> bool {
        matches!(self.request(Frame::empty(FrameType::Ping), &[], timeout), Ok(f) if f.kind == FrameType::Ping)
    }

    pub fn kill(&mut self) {
        if self.alive {
            let _ = self.child.kill();
            self.alive = false;
        }
        self.stdin = None;
        let _ = self.child.wait();
    }

    /// Sends BYE and waits briefly for a clean exit; kills otherwise.
    pub fn shutdown(mut self) -> Option<i32> {
        if self.is_alive() {
            if let Some(stdin) = self.stdin.as_mut() {
                let _ = write_frame(stdin, &Frame::empty(FrameType::Bye));
            }
            self.stdin = None;
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(status)) = self.child.try_wait() {
                    self.alive = false;
                    return status.code();
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
        self.kill();
        None
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        if self.alive {
            self.kill();
        }
    }
}
