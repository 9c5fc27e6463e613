//! Core job data model shared by every backend: job specifications,
//! resource requests, and the job lifecycle state machine.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Wall-clock seconds since the Unix epoch, used to stamp status records.
pub fn now_ts() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Resource request for one job: whole nodes, processes per node, and
/// per-process cores/gpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceSpec {
    pub node_count: u32,
    pub processes_per_node: u32,
    pub cpu_cores_per_process: u32,
    pub gpu_cores_per_process: u32,
    pub exclusive: bool,
}

impl Default for ResourceSpec {
    fn default() -> Self {
        ResourceSpec {
            node_count: 1,
            processes_per_node: 1,
            cpu_cores_per_process: 1,
            gpu_cores_per_process: 0,
            exclusive: false,
        }
    }
}

impl ResourceSpec {
    pub fn total_processes(&self) -> u64 {
        self.node_count as u64 * self.processes_per_node as u64
    }

    pub fn total_cores(&self) -> u64 {
        self.total_processes() * self.cpu_cores_per_process as u64
    }
}

/// Scheduler-facing attributes: wall time, queue, account, and free-form
/// custom attributes (rendered into directives by batch adapters).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JobAttributes {
    /// Requested wall time in seconds. Batch backends require a positive
    /// value; pilot task specs may use 0 to mean "no limit".
    #[serde(rename = "wall_time_s")]
    pub wall_time: u64,
    pub queue_name: Option<String>,
    pub account: Option<String>,
    pub custom: IndexMap<String, String>,
}

impl Default for JobAttributes {
    fn default() -> Self {
        JobAttributes {
            wall_time: 600,
            queue_name: None,
            account: None,
            custom: IndexMap::new(),
        }
    }
}

/// How a task spec is turned into processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Launcher {
    #[default]
    Single,
    Multiple,
    MpiLike,
}

impl Launcher {
    pub fn as_str(self) -> &'static str {
        match self {
            Launcher::Single => "single",
            Launcher::Multiple => "multiple",
            Launcher::MpiLike => "mpi_like",
        }
    }
}

/// Complete description of one unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub executable: String,
    #[serde(default)]
    pub arguments: Vec<String>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub stdin_path: Option<PathBuf>,
    #[serde(default)]
    pub stdout_path: Option<PathBuf>,
    #[serde(default)]
    pub stderr_path: Option<PathBuf>,
    #[serde(default)]
    pub resources: ResourceSpec,
    #[serde(default)]
    pub attributes: JobAttributes,
    #[serde(default)]
    pub launcher: Launcher,
}

impl JobSpec {
    /// Minimal spec running `executable` with default resources.
    pub fn new(executable: impl Into<String>) -> Self {
        JobSpec {
            executable: executable.into(),
            arguments: Vec::new(),
            environment: BTreeMap::new(),
            directory: None,
            stdin_path: None,
            stdout_path: None,
            stderr_path: None,
            resources: ResourceSpec::default(),
            attributes: JobAttributes::default(),
            launcher: Launcher::Single,
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.arguments = args.into_iter().map(Into::into).collect();
        self
    }

    /// Strict parse of the canonical JSON job spec document. Unknown keys
    /// are an error.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("job spec serializes")
    }
}

/// Lifecycle states. `Completed`, `Failed`, and `Canceled` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    New,
    Queued,
    Active,
    Completed,
    Failed,
    Canceled,
}

pub const ALL_STATES: [JobState; 6] = [
    JobState::New,
    JobState::Queued,
    JobState::Active,
    JobState::Completed,
    JobState::Failed,
    JobState::Canceled,
];

/// The complete legal transition relation. No edge leaves a terminal state.
pub const LEGAL_TRANSITIONS: [(JobState, JobState); 8] = [
    (JobState::New, JobState::Queued),
    (JobState::New, JobState::Failed),
    (JobState::Queued, JobState::Active),
    (JobState::Queued, JobState::Canceled),
    (JobState::Queued, JobState::Failed),
    (JobState::Active, JobState::Completed),
    (JobState::Active, JobState::Failed),
    (JobState::Active, JobState::Canceled),
];

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Canceled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::New => "NEW",
            JobState::Queued => "QUEUED",
            JobState::Active => "ACTIVE",
            JobState::Completed => "COMPLETED",
            JobState::Failed => "FAILED",
            JobState::Canceled => "CANCELED",
        }
    }

    pub fn parse(token: &str) -> Option<JobState> {
        ALL_STATES.iter().copied().find(|s| s.as_str() == token)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `true` exactly for the eight legal lifecycle transitions.
pub fn transition_allowed(from: JobState, to: JobState) -> bool {
    use JobState::*;
    match (from, to) {
        (New, Queued) | (New, Failed) => true,
        (Queued, Active) | (Queued, Canceled) | (Queued, Failed) => true,
        (Active, Completed) | (Active, Failed) | (Active, Canceled) => true,
        _ => false,
    }
}

/// One observation of a job's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    pub timestamp: f64,
    pub exit_code: Option<i32>,
    pub message: Option<String>,
}

impl JobStatus {
    pub fn new(state: JobState) -> Self {
        JobStatus {
            state,
            timestamp: now_ts(),
            exit_code: None,
            message: None,
        }
    }

    pub fn with_exit_code(mut self, code: i32) -> Self {
        self.exit_code = Some(code);
        self
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }
}

/// A job known to the client: the spec it was created from plus the
/// ordered status history observed so far. The history always forms a
/// path in the legal transition relation and contains at most one
/// terminal status, which is last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub native_id: Option<String>,
    pub spec: JobSpec,
    pub status_history: Vec<JobStatus>,
}

impl Job {
    /// New job with a fresh client-unique id and a `NEW` history entry.
    pub fn new(spec: JobSpec) -> Self {
        Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            native_id: None,
            spec,
            status_history: vec![JobStatus::new(JobState::New)],
        }
    }

    pub fn current(&self) -> &JobStatus {
        self.status_history.last().expect("history is never empty")
    }

    pub fn state(&self) -> JobState {
        self.current().state
    }
}

/// Rejected status application: the transition is not in the legal relation.
/// Signals a backend bug or a stale event.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal job state transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: JobState,
    pub to: JobState,
}

/// Append `status` to the job's history if the transition is legal.
///
/// Returns `Ok(true)` when appended, `Ok(false)` when the status is a
/// repeat of the already-recorded terminal state (dropped silently), and
/// `Err` otherwise.
pub fn apply_status(job: &mut Job, status: JobStatus) -> Result<bool, IllegalTransition> {
    let from = job.state();
    if from == status.state && from.is_terminal() {
        return Ok(false);
    }
    if !transition_allowed(from, status.state) {
        return Err(IllegalTransition { from, to: status.state });
    }
    job.status_history.push(status);
    Ok(true)
}

/// Check every declared invariant of a job spec. Returns one description
/// per violation; the empty list means the spec is valid for submission.
pub fn validate_spec(spec: &JobSpec) -> Vec<String> {
    let mut violations = validate_spec_common(spec);
    if spec.attributes.wall_time == 0 {
        violations.push("wall_time must be > 0".to_string());
    }
    violations
}

/// The invariants shared by batch jobs and pilot tasks (everything except
/// the positive-wall-time rule, which only batch submission enforces).
pub(crate) fn validate_spec_common(spec: &JobSpec) -> Vec<String> {
    let mut violations = Vec::new();
    if spec.executable.is_empty() {
        violations.push("executable must be non-empty".to_string());
    }
    let r = &spec.resources;
    if r.node_count == 0 {
        violations.push("node_count must be ≥ 1".to_string());
    }
    if r.processes_per_node == 0 {
        violations.push("processes_per_node must be ≥ 1".to_string());
    }
    if r.cpu_cores_per_process == 0 {
        violations.push("cpu_cores_per_process must be ≥ 1".to_string());
    }
    if spec.launcher == Launcher::Single && r.node_count >= 1 && r.processes_per_node >= 1 {
        let total = r.total_processes();
        if total != 1 {
            violations.push(format!(
                "launcher 'single' requires exactly one process, got {total}"
            ));
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn true_spec() -> JobSpec {
        JobSpec::new("/bin/true")
    }

    #[test]
    fn default_spec_is_valid() {
        assert!(validate_spec(&true_spec()).is_empty());
    }

    #[test]
    fn zero_node_count_is_one_violation() {
        let mut spec = true_spec();
        spec.resources.node_count = 0;
        assert_eq!(validate_spec(&spec), vec!["node_count must be ≥ 1".to_string()]);
    }

    #[test]
    fn single_launcher_requires_one_process() {
        let mut spec = true_spec();
        spec.resources.node_count = 2;
        spec.resources.processes_per_node = 1;
        let violations = validate_spec(&spec);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("single"), "violation names the rule: {violations:?}");
    }

    #[test]
    fn empty_executable_reported() {
        let spec = JobSpec::new("");
        assert_eq!(validate_spec(&spec), vec!["executable must be non-empty".to_string()]);
    }

    #[test]
    fn zero_wall_time_rejected_for_batch() {
        let mut spec = true_spec();
        spec.attributes.wall_time = 0;
        assert_eq!(validate_spec(&spec), vec!["wall_time must be > 0".to_string()]);
        assert!(validate_spec_common(&spec).is_empty());
    }

    #[test]
    fn validate_is_pure() {
        let mut spec = true_spec();
        spec.resources.node_count = 0;
        spec.resources.cpu_cores_per_process = 0;
        assert_eq!(validate_spec(&spec), validate_spec(&spec));
    }

    #[test]
    fn totals() {
        let r = ResourceSpec {
            node_count: 2,
            processes_per_node: 3,
            cpu_cores_per_process: 4,
            gpu_cores_per_process: 1,
            exclusive: false,
        };
        assert_eq!(r.total_processes(), 6);
        assert_eq!(r.total_cores(), 24);
    }

    #[test]
    fn listed_transitions_allowed() {
        assert!(transition_allowed(JobState::New, JobState::Queued));
        assert!(!transition_allowed(JobState::Completed, JobState::Active));
    }

    #[test]
    fn transition_table_matches_edge_list() {
        // Brute-force enumeration of the declared edge list as the oracle.
        let mut allowed = 0;
        for &from in &ALL_STATES {
            for &to in &ALL_STATES {
                let in_list = LEGAL_TRANSITIONS.contains(&(from, to));
                assert_eq!(
                    transition_allowed(from, to),
                    in_list,
                    "disagreement on ({from}, {to})"
                );
                if in_list {
                    allowed += 1;
                }
            }
        }
        assert_eq!(allowed, 8);
    }

    #[test]
    fn no_transition_leaves_terminal() {
        for &(from, _) in &LEGAL_TRANSITIONS {
            assert!(!from.is_terminal());
        }
    }

    #[test]
    fn apply_status_appends_legal() {
        let mut job = Job::new(true_spec());
        assert!(apply_status(&mut job, JobStatus::new(JobState::Queued)).unwrap());
        let states: Vec<_> = job.status_history.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![JobState::New, JobState::Queued]);
    }

    #[test]
    fn apply_status_rejects_from_terminal() {
        let mut job = Job::new(true_spec());
        apply_status(&mut job, JobStatus::new(JobState::Queued)).unwrap();
        apply_status(&mut job, JobStatus::new(JobState::Active)).unwrap();
        apply_status(&mut job, JobStatus::new(JobState::Completed).with_exit_code(0)).unwrap();
        let err = apply_status(&mut job, JobStatus::new(JobState::Failed)).unwrap_err();
        assert_eq!(
            err,
            IllegalTransition { from: JobState::Completed, to: JobState::Failed }
        );
    }

    #[test]
    fn repeated_terminal_is_dropped() {
        let mut job = Job::new(true_spec());
        apply_status(&mut job, JobStatus::new(JobState::Queued)).unwrap();
        apply_status(&mut job, JobStatus::new(JobState::Active)).unwrap();
        let done = JobStatus::new(JobState::Completed).with_exit_code(0);
        assert!(apply_status(&mut job, done.clone()).unwrap());
        assert!(!apply_status(&mut job, done).unwrap());
        let completed = job
            .status_history
            .iter()
            .filter(|s| s.state == JobState::Completed)
            .count();
        assert_eq!(completed, 1);
    }

    #[test]
    fn strict_json_rejects_unknown_keys() {
        let err = JobSpec::from_json(r#"{"executable": "/bin/true", "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn canonical_json_round_trip() {
        let text = r#"{
            "executable": "/bin/echo",
            "arguments": ["hi"],
            "environment": {"A": "1"},
            "directory": "/tmp",
            "stdout_path": "/tmp/out",
            "resources": {"node_count": 2, "processes_per_node": 2,
                          "cpu_cores_per_process": 1, "gpu_cores_per_process": 0,
                          "exclusive": true},
            "attributes": {"wall_time_s": 60, "queue_name": "debug",
                           "account": "acct", "custom": {"k": "v"}},
            "launcher": "mpi_like"
        }"#;
        let spec = JobSpec::from_json(text).unwrap();
        assert_eq!(spec.launcher, Launcher::MpiLike);
        assert_eq!(spec.attributes.wall_time, 60);
        assert_eq!(spec.resources.total_processes(), 4);
        let again = JobSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn state_tokens_round_trip() {
        for &s in &ALL_STATES {
            assert_eq!(JobState::parse(s.as_str()), Some(s));
        }
        assert_eq!(JobState::parse("BOGUS"), None);
        assert_eq!(serde_json::to_string(&JobState::Canceled).unwrap(), "\"CANCELED\"");
    }
}
