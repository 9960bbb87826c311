//! Lifecycle of environment server processes: materialize, spawn on a free
//! port, health-check, capture stdout, lease to rollouts, restart, tear down.

mod capture;

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{ParseMode, RewardParser, RewardStream};
use crate::synthesis::EnvBundle;
use capture::{StderrCapture, StdoutCapture};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool at capacity ({max_live} live handles)")]
    Capacity { max_live: usize },
    #[error("no free port in {lo}..={hi}")]
    NoFreePort { lo: u16, hi: u16 },
    #[error("environment failed to start: {reason}")]
    SpawnFailed { reason: String, stdout: Vec<String>, stderr: Vec<String> },
    #[error("handle {0} is no longer live")]
    StaleHandle(u64),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no environment became available within {0:?}")]
    LeaseTimeout(Duration),
    #[error("invalid pool config: {0}")]
    Config(String),
    #[error("pool has been shut down")]
    ShutDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub max_live: usize,
    /// Inclusive port range handed out to environments.
    pub port_range: (u16, u16),
    pub spawn_timeout_s: f64,
    /// Default health endpoint; a bundle's own `health_path` takes precedence.
    pub health_path: String,
    pub lease_timeout_s: f64,
    pub parse_mode: ParseMode,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            max_live: 8,
            port_range: (20000, 20999),
            spawn_timeout_s: 10.0,
            health_path: "/".into(),
            lease_timeout_s: 60.0,
            parse_mode: ParseMode::Lenient,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), PoolError> {
        let (lo, hi) = self.port_range;
        if self.max_live == 0 {
            return Err(PoolError::Config("max_live must be positive".into()));
        }
        if hi < lo || (hi - lo) as usize + 1 < self.max_live {
            return Err(PoolError::Config(format!("port range {lo}..={hi} smaller than max_live {}", self.max_live)));
        }
        if [self.spawn_timeout_s, self.lease_timeout_s].iter().any(|t| t.is_nan() || *t <= 0.0) {
            return Err(PoolError::Config("timeouts must be positive".into()));
        }
        Ok(())
    }

    fn spawn_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.spawn_timeout_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleState {
    Starting,
    Ready,
    Leased,
    Stopped,
    Failed,
}

impl HandleState {
    fn can_become(self, next: HandleState) -> bool {
        use HandleState::*;
        matches!(
            (self, next),
            (Starting, Ready)
                | (Starting, Failed)
                | (Ready, Leased)
                | (Leased, Ready)
                | (Ready, Stopped)
                | (Leased, Stopped)
        )
    }
}

/// Ports reserved by every pool in this process.
fn reserved_ports() -> &'static Mutex<BTreeSet<u16>> {
    static PORTS: OnceLock<Mutex<BTreeSet<u16>>> = OnceLock::new();
    PORTS.get_or_init(Default::default)
}

fn allocate_port((lo, hi): (u16, u16)) -> Result<u16, PoolError> {
    let mut reserved = reserved_ports().lock().unwrap();
    for port in lo..=hi {
        if reserved.contains(&port) {
            continue;
        }
        if TcpListener::bind(("0.0.0.0", port)).is_ok() {
            reserved.insert(port);
            return Ok(port);
        }
    }
    Err(PoolError::NoFreePort { lo, hi })
}

fn free_port(port: u16) {
    reserved_ports().lock().unwrap().remove(&port);
}

/// True if a process with this pid exists.
pub fn process_alive(pid: u32) -> bool {
    // SAFETY: signal 0 performs only the existence/permission check.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}

struct Running {
    child: Child,
    stdout: StdoutCapture,
    stderr: StderrCapture,
    _workdir: tempfile::TempDir,
}

impl Running {
    fn pid(&self) -> u32 {
        self.child.id()
    }

    /// Kills the whole process group and reaps the child.
    fn kill(&mut self) {
        let pid = self.child.id() as libc::pid_t;
        // SAFETY: the child leads its own process group (set at spawn).
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.stdout.finish(Duration::from_millis(500));
    }
}

struct ProcSlot {
    running: Option<Running>,
    pid: u32,
    cursor: usize,
    parser: RewardParser,
    trailing: RewardStream,
}

struct HandleInner {
    id: u64,
    port: u16,
    base_url: String,
    fingerprint: String,
    bundle: Arc<EnvBundle>,
    state: Mutex<HandleState>,
    proc: Mutex<ProcSlot>,
}

/// A live (or formerly live) environment process. Cheap to clone.
#[derive(Clone)]
pub struct EnvHandle(Arc<HandleInner>);

impl std::fmt::Debug for EnvHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnvHandle")
            .field("id", &self.0.id)
            .field("base_url", &self.0.base_url)
            .field("state", &self.state())
            .finish()
    }
}

impl PartialEq for EnvHandle {
    fn eq(&self, other: &Self) -> bool {
        self.0.id == other.0.id
    }
}

impl EnvHandle {
    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// `host:port` the environment listens on.
    pub fn base_url(&self) -> &str {
        &self.0.base_url
    }

    pub fn url(&self, target: &str) -> String {
        if target.starts_with('/') {
            format!("http://{}{}", self.0.base_url, target)
        } else {
            format!("http://{}/{}", self.0.base_url, target)
        }
    }

    pub fn port(&self) -> u16 {
        self.0.port
    }

    pub fn state(&self) -> HandleState {
        *self.0.state.lock().unwrap()
    }

    pub fn bundle(&self) -> &EnvBundle {
        &self.0.bundle
    }

    /// Pid of the current process (changes across restarts).
    pub fn pid(&self) -> u32 {
        self.0.proc.lock().unwrap().pid
    }

    pub fn stdout_cursor(&self) -> usize {
        self.0.proc.lock().unwrap().cursor
    }

    fn set_state(&self, next: HandleState) -> Result<(), PoolError> {
        let mut st = self.0.state.lock().unwrap();
        if !st.can_become(next) {
            return Err(PoolError::Contract(format!("handle {}: {:?} -> {:?}", self.0.id, *st, next)));
        }
        *st = next;
        Ok(())
    }

    /// Parses every stdout line emitted since the previous drain.
    pub fn drain(&self) -> Result<RewardStream, PoolError> {
        if matches!(self.state(), HandleState::Stopped | HandleState::Failed) {
            return Err(PoolError::StaleHandle(self.0.id));
        }
        let mut slot = self.0.proc.lock().unwrap();
        let Some(running) = slot.running.as_ref() else {
            return Err(PoolError::StaleHandle(self.0.id));
        };
        let lines = running.stdout.lines_from(slot.cursor);
        slot.cursor += lines.len();
        Ok(slot.parser.parse(lines))
    }

    /// Events collected when a process exited (restart or stop) that no drain
    /// returned. Taking them clears the buffer.
    pub fn take_trailing(&self) -> RewardStream {
        std::mem::take(&mut self.0.proc.lock().unwrap().trailing)
    }

    pub fn stderr_lines(&self) -> Vec<String> {
        self.0.proc.lock().unwrap().running.as_ref().map(|r| r.stderr.snapshot()).unwrap_or_default()
    }

    fn stop_process(&self) {
        let mut slot = self.0.proc.lock().unwrap();
        if let Some(mut running) = slot.running.take() {
            running.kill();
            let lines = running.stdout.lines_from(slot.cursor);
            slot.cursor += lines.len();
            let tail = slot.parser.parse(lines);
            slot.trailing.extend(tail);
        }
    }

    fn start_process(&self, cfg: &PoolConfig) -> Result<(), PoolError> {
        let health = self.0.bundle.health_path.clone().unwrap_or_else(|| cfg.health_path.clone());
        let running = launch(&self.0.bundle, self.0.port, &health, cfg)?;
        let mut slot = self.0.proc.lock().unwrap();
        slot.pid = running.pid();
        slot.running = Some(running);
        slot.cursor = 0;
        slot.parser = RewardParser::new(cfg.parse_mode);
        Ok(())
    }
}

fn spawn_failure(reason: impl Into<String>, running: Option<Running>) -> PoolError {
    let (stdout, stderr) = match running {
        Some(mut r) => {
            r.kill();
            (r.stdout.lines_from(0), r.stderr.snapshot())
        }
        None => (Vec::new(), Vec::new()),
    };
    PoolError::SpawnFailed { reason: reason.into(), stdout, stderr }
}

fn health_ok(agent: &ureq::Agent, url: &str) -> bool {
    match agent.get(url).call() {
        Ok(resp) => resp.status() < 500,
        Err(ureq::Error::Status(code, _)) => code < 500,
        Err(_) => false,
    }
}

fn launch(bundle: &EnvBundle, port: u16, health_path: &str, cfg: &PoolConfig) -> Result<Running, PoolError> {
    let workdir = tempfile::Builder::new()
        .prefix("envforge-env-")
        .tempdir()
        .map_err(|e| spawn_failure(format!("creating workdir: {e}"), None))?;
    for (rel, bytes) in &bundle.files {
        let path = workdir.path().join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| spawn_failure(format!("materializing {rel}: {e}"), None))?;
        }
        std::fs::write(&path, bytes).map_err(|e| spawn_failure(format!("materializing {rel}: {e}"), None))?;
    }
    let mut parts = bundle.run.split_whitespace();
    let program = parts.next().ok_or_else(|| spawn_failure("empty run command", None))?;
    let mut child = Command::new(program)
        .args(parts)
        .current_dir(workdir.path())
        .env("PORT", port.to_string())
        .env("PYTHONUNBUFFERED", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| spawn_failure(format!("starting `{}`: {e}", bundle.run), None))?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = StderrCapture::start(child.stderr.take().expect("piped stderr"));
    let stdout = match StdoutCapture::start(stdout) {
        Ok(c) => c,
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(spawn_failure(format!("capturing stdout: {e}"), None));
        }
    };
    let mut running = Running { child, stdout, stderr, _workdir: workdir };

    let agent = ureq::AgentBuilder::new().timeout(Duration::from_millis(500)).redirects(0).build();
    let url = format!("http://127.0.0.1:{port}{health_path}");
    let deadline = Instant::now() + cfg.spawn_timeout();
    loop {
        if let Ok(Some(status)) = running.child.try_wait() {
            // Give the stderr reader a moment to collect the traceback.
            std::thread::sleep(Duration::from_millis(20));
            return Err(spawn_failure(format!("process exited during startup ({status})"), Some(running)));
        }
        if health_ok(&agent, &url) {
            return Ok(running);
        }
        if Instant::now() >= deadline {
            return Err(spawn_failure(format!("health check {health_path} timed out"), Some(running)));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

struct PoolState {
    handles: Vec<EnvHandle>,
    /// Handles counted against `max_live`, including ones still starting.
    live: usize,
    shut_down: bool,
}

struct PoolShared {
    cfg: PoolConfig,
    state: Mutex<PoolState>,
    changed: Condvar,
    next_id: AtomicU64,
    launches: AtomicU64,
}

impl Drop for PoolShared {
    fn drop(&mut self) {
        let st = self.state.get_mut().unwrap();
        for h in st.handles.drain(..) {
            h.stop_process();
            free_port(h.port());
        }
    }
}

/// Shared pool of environment processes. Clones refer to the same pool.
#[derive(Clone)]
pub struct EnvPool(Arc<PoolShared>);

impl EnvPool {
    pub fn new(cfg: PoolConfig) -> Result<Self, PoolError> {
        cfg.validate()?;
        Ok(Self(Arc::new(PoolShared {
            cfg,
            state: Mutex::new(PoolState { handles: Vec::new(), live: 0, shut_down: false }),
            changed: Condvar::new(),
            next_id: AtomicU64::new(1),
            launches: AtomicU64::new(0),
        })))
    }

    pub fn config(&self) -> &PoolConfig {
        &self.0.cfg
    }

    fn lock(&self) -> MutexGuard<'_, PoolState> {
        self.0.state.lock().unwrap()
    }

    /// Number of handles holding a slot (starting, ready or leased).
    pub fn live_count(&self) -> usize {
        self.lock().live
    }

    pub fn handles(&self) -> Vec<EnvHandle> {
        self.lock().handles.clone()
    }

    /// Environment processes launched so far, including restarts.
    pub fn launch_count(&self) -> u64 {
        self.0.launches.load(Ordering::Relaxed)
    }

    /// Starts a new process for `bundle`. Caller must hold a reserved slot.
    fn start(&self, bundle: Arc<EnvBundle>, fingerprint: String, leased: bool) -> Result<EnvHandle, PoolError> {
        let port = match allocate_port(self.0.cfg.port_range) {
            Ok(p) => p,
            Err(e) => {
                self.release_slot(None);
                return Err(e);
            }
        };
        let handle = EnvHandle(Arc::new(HandleInner {
            id: self.0.next_id.fetch_add(1, Ordering::Relaxed),
            port,
            base_url: format!("127.0.0.1:{port}"),
            fingerprint,
            bundle,
            state: Mutex::new(HandleState::Starting),
            proc: Mutex::new(ProcSlot {
                running: None,
                pid: 0,
                cursor: 0,
                parser: RewardParser::new(self.0.cfg.parse_mode),
                trailing: RewardStream::default(),
            }),
        }));
        self.0.launches.fetch_add(1, Ordering::Relaxed);
        match handle.start_process(&self.0.cfg) {
            Ok(()) => {
                let mut st = self.lock();
                if st.shut_down {
                    st.live = st.live.saturating_sub(1);
                    drop(st);
                    *handle.0.state.lock().unwrap() = HandleState::Stopped;
                    handle.stop_process();
                    free_port(port);
                    return Err(PoolError::ShutDown);
                }
                handle.set_state(HandleState::Ready)?;
                if leased {
                    handle.set_state(HandleState::Leased)?;
                }
                st.handles.push(handle.clone());
                Ok(handle)
            }
            Err(e) => {
                let _ = handle.set_state(HandleState::Failed);
                self.release_slot(Some(port));
                Err(e)
            }
        }
    }

    fn release_slot(&self, port: Option<u16>) {
        if let Some(p) = port {
            free_port(p);
        }
        let mut st = self.lock();
        st.live = st.live.saturating_sub(1);
        drop(st);
        self.0.changed.notify_all();
    }

    /// Spawns a ready (unleased) environment; fails immediately at capacity.
    pub fn spawn(&self, bundle: &EnvBundle) -> Result<EnvHandle, PoolError> {
        {
            let mut st = self.lock();
            if st.shut_down {
                return Err(PoolError::ShutDown);
            }
            if st.live >= self.0.cfg.max_live {
                return Err(PoolError::Capacity { max_live: self.0.cfg.max_live });
            }
            st.live += 1;
        }
        self.start(Arc::new(bundle.clone()), bundle.fingerprint(), false)
    }

    /// Leases an environment for `bundle`: reuses an idle one, spawns if there
    /// is capacity, evicts an idle environment of another bundle, or waits.
    pub fn lease(&self, bundle: &EnvBundle) -> Result<EnvHandle, PoolError> {
        let timeout = Duration::from_secs_f64(self.0.cfg.lease_timeout_s);
        self.lease_with_timeout(bundle, timeout)
    }

    pub fn lease_with_timeout(&self, bundle: &EnvBundle, timeout: Duration) -> Result<EnvHandle, PoolError> {
        let fingerprint = bundle.fingerprint();
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            if st.shut_down {
                return Err(PoolError::ShutDown);
            }
            if let Some(h) =
                st.handles.iter().find(|h| h.0.fingerprint == fingerprint && h.state() == HandleState::Ready)
            {
                h.set_state(HandleState::Leased)?;
                return Ok(h.clone());
            }
            if st.live < self.0.cfg.max_live {
                st.live += 1;
                drop(st);
                return self.start(Arc::new(bundle.clone()), fingerprint, true);
            }
            if let Some(pos) = st.handles.iter().position(|h| h.state() == HandleState::Ready) {
                let idle = st.handles.remove(pos);
                idle.set_state(HandleState::Stopped)?;
                idle.stop_process();
                free_port(idle.port());
                st.live -= 1;
                continue;
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(PoolError::LeaseTimeout(timeout));
            }
            st = self.0.changed.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    /// Returns a leased handle. The process is restarted so the next episode
    /// starts from fresh in-memory state.
    pub fn release(&self, handle: &EnvHandle) -> Result<(), PoolError> {
        {
            let _st = self.lock();
            if handle.state() != HandleState::Leased {
                return Err(PoolError::Contract(format!(
                    "release of handle {} in state {:?}",
                    handle.id(),
                    handle.state()
                )));
            }
        }
        handle.stop_process();
        self.0.launches.fetch_add(1, Ordering::Relaxed);
        let restarted = handle.start_process(&self.0.cfg);
        let mut st = self.lock();
        let result = match restarted {
            Ok(()) => handle.set_state(HandleState::Ready),
            Err(e) => {
                *handle.0.state.lock().unwrap() = HandleState::Failed;
                st.handles.retain(|h| h != handle);
                st.live -= 1;
                free_port(handle.port());
                Err(e)
            }
        };
        drop(st);
        self.0.changed.notify_all();
        result
    }

    /// Stops one handle and frees its slot.
    pub fn stop(&self, handle: &EnvHandle) -> Result<(), PoolError> {
        let mut st = self.lock();
        handle.set_state(HandleState::Stopped)?;
        st.handles.retain(|h| h != handle);
        st.live -= 1;
        drop(st);
        handle.stop_process();
        free_port(handle.port());
        self.0.changed.notify_all();
        Ok(())
    }

    /// Terminates every child process and frees all ports. Idempotent.
    pub fn shutdown(&self) {
        let handles = {
            let mut st = self.lock();
            st.shut_down = true;
            st.live -= st.handles.len().min(st.live);
            std::mem::take(&mut st.handles)
        };
        for h in handles {
            *h.0.state.lock().unwrap() = HandleState::Stopped;
            h.stop_process();
            free_port(h.port());
        }
        self.0.changed.notify_all();
    }
}
