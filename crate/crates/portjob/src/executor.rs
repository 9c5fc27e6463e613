//! Backend-neutral executor abstraction: submit/cancel/attach/wait plus
//! asynchronous status callbacks and launch-command rendering.
//!
//! Executors return [`JobHandle`]s. A handle owns the job's status history
//! and serializes status application per job: callbacks for one job are
//! delivered in history order, concurrently across jobs, and never after a
//! terminal status has been delivered. `wait` is layered over the same
//! notification path, so backends only ever push statuses.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{
    apply_status, transition_allowed, IllegalTransition, Job, JobSpec, JobState, JobStatus,
    Launcher,
};

/// Errors surfaced by executors and the backend registry.
#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("invalid job spec: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),
    #[error("submit failed: {0}")]
    SubmitFailed(String),
    #[error("unknown job: {0}")]
    UnknownJob(String),
    #[error("unknown native id: {0}")]
    UnknownNativeId(String),
    #[error("timed out waiting for job state")]
    Timeout,
    #[error("backend name already registered: {0}")]
    DuplicateName(String),
    #[error("backend not registered: {0}")]
    NotFound(String),
    #[error("could not parse native id from submit output: {0:?}")]
    IdParse(String),
    #[error("unsupported attribute: {0}")]
    UnsupportedAttribute(String),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("{0}")]
    Backend(String),
}

/// What a backend supports beyond plain submit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Attach,
    Cancel,
    Nested,
}

/// Identity and capability advertisement for one backend implementation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorDescriptor {
    pub name: String,
    pub version: String,
    pub capabilities: BTreeSet<Capability>,
}

impl ExecutorDescriptor {
    pub fn new(name: &str, version: &str, capabilities: &[Capability]) -> Self {
        ExecutorDescriptor {
            name: name.to_string(),
            version: version.to_string(),
            capabilities: capabilities.iter().copied().collect(),
        }
    }
}

/// Invoked with `(job id, status)` on every delivered state change.
pub type StatusCallback = Arc<dyn Fn(&str, &JobStatus) + Send + Sync>;

/// One process invocation: argv plus environment additions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchCommand {
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
}

impl LaunchCommand {
    pub fn new(argv: Vec<String>) -> Self {
        LaunchCommand { argv, env: BTreeMap::new() }
    }
}

/// Site configuration for launch rendering.
#[derive(Debug, Clone)]
pub struct LauncherConfig {
    /// Launcher binary used for `mpi_like` specs.
    pub mpi_shim: String,
}

impl Default for LauncherConfig {
    fn default() -> Self {
        LauncherConfig { mpi_shim: "mpiexec".to_string() }
    }
}

/// Render the per-process launch plan for a valid spec.
///
/// `single` yields one command; `multiple` yields `total_processes()`
/// identical commands; `mpi_like` yields one shim invocation carrying the
/// rank count.
pub fn render_launch(spec: &JobSpec, cfg: &LauncherConfig) -> Vec<LaunchCommand> {
    let mut base = vec![spec.executable.clone()];
    base.extend(spec.arguments.iter().cloned());
    match spec.launcher {
        Launcher::Single => vec![LaunchCommand::new(base)],
        Launcher::Multiple => {
            let n = spec.resources.total_processes() as usize;
            (0..n).map(|_| LaunchCommand::new(base.clone())).collect()
        }
        Launcher::MpiLike => {
            let mut argv = vec![
                cfg.mpi_shim.clone(),
                "-n".to_string(),
                spec.resources.total_processes().to_string(),
            ];
            argv.extend(base);
            vec![LaunchCommand::new(argv)]
        }
    }
}

/// Shared, thread-safe handle to one job.
#[derive(Clone)]
pub struct JobHandle {
    core: Arc<JobCore>,
}

struct JobCore {
    /// Serializes append+deliver so callback order equals history order.
    /// Held across user callbacks; the state lock below is not.
    delivery: Mutex<()>,
    state: Mutex<JobMut>,
    cond: Condvar,
    id: String,
    spec: JobSpec,
}

struct JobMut {
    native_id: Option<String>,
    history: Vec<JobStatus>,
    callbacks: Vec<StatusCallback>,
}

impl fmt::Debug for JobHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.state.lock().unwrap();
        f.debug_struct("JobHandle")
            .field("id", &self.core.id)
            .field("native_id", &st.native_id)
            .field("state", &st.history.last().map(|s| s.state))
            .finish()
    }
}

impl std::ops::Deref for JobHandle {
    type Target = JobCore;
    fn deref(&self) -> &JobCore {
        &self.core
    }
}

impl JobHandle {
    /// Fresh handle in `NEW` state.
    pub fn new(spec: JobSpec) -> Self {
        let id = uuid::Uuid::new_v4().simple().to_string();
        Self::with_id(id, spec)
    }

    pub fn with_id(id: String, spec: JobSpec) -> Self {
        JobHandle {
            core: Arc::new(JobCore {
                delivery: Mutex::new(()),
                state: Mutex::new(JobMut {
                    native_id: None,
                    history: vec![JobStatus::new(JobState::New)],
                    callbacks: Vec::new(),
                }),
                cond: Condvar::new(),
                id,
                spec,
            }),
        }
    }

    pub fn id(&self) -> &str {
        &self.core.id
    }

    pub fn spec(&self) -> &JobSpec {
        &self.core.spec
    }

    pub fn native_id(&self) -> Option<String> {
        self.core.state.lock().unwrap().native_id.clone()
    }

    pub fn set_native_id(&self, native_id: impl Into<String>) {
        self.core.state.lock().unwrap().native_id = Some(native_id.into());
    }

    /// Last delivered status.
    pub fn current(&self) -> JobStatus {
        self.core
            .state
            .lock()
            .unwrap()
            .history
            .last()
            .expect("history never empty")
            .clone()
    }

    pub fn state(&self) -> JobState {
        self.current().state
    }

    pub fn history(&self) -> Vec<JobStatus> {
        self.core.state.lock().unwrap().history.clone()
    }

    pub fn history_states(&self) -> Vec<JobState> {
        self.core
            .state
            .lock()
            .unwrap()
            .history
            .iter()
            .map(|s| s.state)
            .collect()
    }

    /// Value snapshot of the job.
    pub fn snapshot(&self) -> Job {
        let st = self.core.state.lock().unwrap();
        Job {
            id: self.core.id.clone(),
            native_id: st.native_id.clone(),
            spec: self.core.spec.clone(),
            status_history: st.history.clone(),
        }
    }

    /// Subscribe to status changes. The existing history is replayed to the
    /// new callback first, so every subscriber observes the full legal path.
    pub fn add_callback(&self, cb: StatusCallback) {
        let _delivery = self.core.delivery.lock().unwrap();
        let replay = {
            let mut st = self.core.state.lock().unwrap();
            st.callbacks.push(cb.clone());
            st.history.clone()
        };
        for status in &replay {
            cb(&self.core.id, status);
        }
    }

    /// Append a status and deliver it to subscribers.
    ///
    /// Returns `Ok(true)` when the status was applied, `Ok(false)` when it
    /// was an idempotent terminal repeat.
    pub fn apply(&self, status: JobStatus) -> Result<bool, IllegalTransition> {
        let _delivery = self.core.delivery.lock().unwrap();
        let (applied, callbacks) = {
            let mut st = self.core.state.lock().unwrap();
            let from = st.history.last().expect("history never empty").state;
            if from == status.state && from.is_terminal() {
                return Ok(false);
            }
            if !transition_allowed(from, status.state) {
                return Err(IllegalTransition { from, to: status.state });
            }
            st.history.push(status.clone());
            (true, st.callbacks.clone())
        };
        self.core.cond.notify_all();
        for cb in &callbacks {
            cb(&self.core.id, &status);
        }
        Ok(applied)
    }

    /// Block until the job's state is in `until` or terminal, or until the
    /// timeout elapses. Terminal states are implicitly included.
    pub fn wait(
        &self,
        until: &[JobState],
        timeout: Option<Duration>,
    ) -> Result<JobStatus, ExecError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.core.state.lock().unwrap();
        loop {
            let last = st.history.last().expect("history never empty");
            if last.state.is_terminal() || until.contains(&last.state) {
                return Ok(last.clone());
            }
            match deadline {
                None => {
                    st = self.core.cond.wait(st).unwrap();
                }
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(ExecError::Timeout);
                    }
                    let (guard, res) = self.core.cond.wait_timeout(st, d - now).unwrap();
                    st = guard;
                    if res.timed_out() {
                        let last = st.history.last().expect("history never empty");
                        if last.state.is_terminal() || until.contains(&last.state) {
                            return Ok(last.clone());
                        }
                        return Err(ExecError::Timeout);
                    }
                }
            }
        }
    }

    /// Convenience: block until any terminal state.
    pub fn wait_terminal(&self, timeout: Option<Duration>) -> Result<JobStatus, ExecError> {
        self.wait(&[], timeout)
    }
}

/// Build the minimal legal history for a job attached in `state`.
///
/// A poller that reconnects by native id has not observed the real path,
/// so the adapter synthesizes one: states with an exit code are assumed to
/// have run (the path goes through `ACTIVE`), a cancellation may not have.
pub fn synthesize_history(state: JobState, exit_code: Option<i32>, message: Option<String>) -> Vec<JobStatus> {
    let mut states: Vec<JobState> = match state {
        JobState::New => vec![],
        JobState::Queued => vec![JobState::Queued],
        JobState::Active => vec![JobState::Queued, JobState::Active],
        JobState::Completed | JobState::Failed => {
            vec![JobState::Queued, JobState::Active, state]
        }
        JobState::Canceled => vec![JobState::Queued, JobState::Canceled],
    };
    let mut history = vec![JobStatus::new(JobState::New)];
    for s in states.drain(..) {
        let mut status = JobStatus::new(s);
        if s == state {
            status.exit_code = if s == JobState::Completed {
                Some(exit_code.unwrap_or(0))
            } else if s == JobState::Failed {
                exit_code
            } else {
                None
            };
            status.message = message.clone();
        }
        history.push(status);
    }
    history
}

/// The backend-neutral job interface.
pub trait Executor: Send + Sync {
    fn descriptor(&self) -> &ExecutorDescriptor;

    /// Submit a valid spec. Returns once the backend durably knows the job;
    /// the handle has reached at least `QUEUED`. Later changes arrive only
    /// through callbacks on the handle.
    fn submit(&self, spec: JobSpec) -> Result<JobHandle, ExecError>;

    /// Request cancellation. No-op acknowledgement for terminal jobs.
    fn cancel(&self, job: &JobHandle) -> Result<(), ExecError>;

    /// Reconnect to a backend job by native id. The returned handle carries
    /// a synthesized legal history ending at the job's current state, and
    /// receives callbacks from then on.
    fn attach(&self, native_id: &str) -> Result<JobHandle, ExecError>;
}

type BackendFactory = Box<dyn Fn() -> Result<Arc<dyn Executor>, ExecError> + Send + Sync>;

/// Name-keyed backend registry. Lookup is case-sensitive.
#[derive(Default)]
pub struct Registry {
    entries: Mutex<BTreeMap<String, (ExecutorDescriptor, BackendFactory)>>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register(
        &self,
        descriptor: ExecutorDescriptor,
        factory: BackendFactory,
    ) -> Result<(), ExecError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&descriptor.name) {
            return Err(ExecError::DuplicateName(descriptor.name));
        }
        entries.insert(descriptor.name.clone(), (descriptor, factory));
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Result<ExecutorDescriptor, ExecError> {
        self.entries
            .lock()
            .unwrap()
            .get(name)
            .map(|(d, _)| d.clone())
            .ok_or_else(|| ExecError::NotFound(name.to_string()))
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn Executor>, ExecError> {
        let entries = self.entries.lock().unwrap();
        let (_, factory) = entries
            .get(name)
            .ok_or_else(|| ExecError::NotFound(name.to_string()))?;
        factory()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.lock().unwrap().keys().cloned().collect()
    }
}
