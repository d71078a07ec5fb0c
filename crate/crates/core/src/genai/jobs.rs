//! Background generation jobs.
//!
//! [`JobTable`] is the pure state machine (queued, running, then one of the
//! terminal states). [`JobQueue`] drives a table from a fixed pool of worker
//! threads.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::JobRequest;
use super::safety::SafetyVerdict;
use super::studio::GeneratedAsset;
use super::GenError;
use crate::clock::Clock;
use crate::model::AssetRef;

pub const DEFAULT_WORKERS: usize = 2;
pub const DEFAULT_BACKLOG: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed | JobState::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JobOutput {
    pub assets: Vec<AssetRef>,
    /// One verdict per asset, same order.
    pub safety: Vec<SafetyVerdict>,
    pub text: Option<String>,
}

impl JobOutput {
    pub fn assets(generated: Vec<GeneratedAsset>) -> Self {
        let (assets, safety) = generated.into_iter().map(|g| (g.asset, g.safety)).unzip();
        Self {
            assets,
            safety,
            text: None,
        }
    }

    pub fn text(text: String) -> Self {
        Self {
            text: Some(text),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub code: String,
    pub message: String,
}

impl From<&GenError> for JobFailure {
    fn from(e: &GenError) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub request: JobRequest,
    pub state: JobState,
    #[serde(default)]
    pub result: Option<JobOutput>,
    #[serde(default)]
    pub error: Option<JobFailure>,
    pub submitted_at: DateTime<Utc>,
    #[serde(default)]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JobError {
    #[error("job queue is full ({capacity} jobs waiting)")]
    QueueFull { capacity: usize },
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job {job} cannot go from {from:?} to {to:?}")]
    InvalidTransition { job: String, from: JobState, to: JobState },
    #[error(transparent)]
    Rejected(#[from] GenError),
}

impl JobError {
    pub fn code(&self) -> &'static str {
        match self {
            JobError::QueueFull { .. } => "QueueFull",
            JobError::UnknownJob(_) => "UnknownJob",
            JobError::InvalidTransition { .. } => "InvalidTransition",
            JobError::Rejected(e) => e.code(),
        }
    }
}

/// Job bookkeeping with no threads or clocks of its own.
#[derive(Debug, Clone)]
pub struct JobTable {
    jobs: BTreeMap<u64, GenerationJob>,
    queue: VecDeque<u64>,
    backlog: usize,
    next_id: u64,
}

fn parse_id(job_id: &str) -> Option<u64> {
    job_id.strip_prefix("job-")?.parse().ok()
}

impl JobTable {
    /// `backlog` bounds the number of queued (not yet running) jobs.
    pub fn new(backlog: usize) -> Self {
        Self {
            jobs: BTreeMap::new(),
            queue: VecDeque::new(),
            backlog,
            next_id: 1,
        }
    }

    /// Validates and enqueues a request. Invalid requests are never queued.
    pub fn submit(&mut self, request: JobRequest, now: DateTime<Utc>) -> Result<GenerationJob, JobError> {
        request.validate()?;
        if self.queue.len() >= self.backlog {
            return Err(JobError::QueueFull { capacity: self.backlog });
        }
        let n = self.next_id;
        self.next_id += 1;
        let job = GenerationJob {
            job_id: format!("job-{n}"),
            request,
            state: JobState::Queued,
            result: None,
            error: None,
            submitted_at: now,
            started_at: None,
            finished_at: None,
        };
        self.jobs.insert(n, job.clone());
        self.queue.push_back(n);
        Ok(job)
    }

    /// Moves the oldest queued job to running.
    pub fn claim(&mut self, now: DateTime<Utc>) -> Option<GenerationJob> {
        let n = self.queue.pop_front()?;
        let job = self.jobs.get_mut(&n).expect("queued job exists");
        job.state = JobState::Running;
        job.started_at = Some(now);
        Some(job.clone())
    }

    /// Records the outcome of a running job. A job cancelled while running
    /// keeps its cancelled state and the outcome is dropped; `Ok(None)` then.
    pub fn finish(
        &mut self,
        job_id: &str,
        outcome: Result<JobOutput, GenError>,
        now: DateTime<Utc>,
    ) -> Result<Option<GenerationJob>, JobError> {
        let job = self.lookup_mut(job_id)?;
        match job.state {
            JobState::Cancelled => Ok(None),
            JobState::Running => {
                match outcome {
                    Ok(out) => {
                        job.state = JobState::Succeeded;
                        job.result = Some(out);
                    }
                    Err(e) => {
                        job.state = JobState::Failed;
                        job.error = Some(JobFailure::from(&e));
                    }
                }
                job.finished_at = Some(now);
                Ok(Some(job.clone()))
            }
            from => Err(JobError::InvalidTransition {
                job: job_id.to_string(),
                from,
                to: JobState::Succeeded,
            }),
        }
    }

    pub fn cancel(&mut self, job_id: &str, now: DateTime<Utc>) -> Result<GenerationJob, JobError> {
        let n = parse_id(job_id).ok_or_else(|| JobError::UnknownJob(job_id.to_string()))?;
        let job = self.lookup_mut(job_id)?;
        match job.state {
            JobState::Queued | JobState::Running => {
                let was_queued = job.state == JobState::Queued;
                job.state = JobState::Cancelled;
                job.finished_at = Some(now);
                let snapshot = job.clone();
                if was_queued {
                    self.queue.retain(|q| *q != n);
                }
                Ok(snapshot)
            }
            from => Err(JobError::InvalidTransition {
                job: job_id.to_string(),
                from,
                to: JobState::Cancelled,
            }),
        }
    }

    pub fn get(&self, job_id: &str) -> Option<&GenerationJob> {
        self.jobs.get(&parse_id(job_id)?)
    }

    fn lookup_mut(&mut self, job_id: &str) -> Result<&mut GenerationJob, JobError> {
        parse_id(job_id)
            .and_then(|n| self.jobs.get_mut(&n))
            .ok_or_else(|| JobError::UnknownJob(job_id.to_string()))
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<GenerationJob> {
        self.jobs.values().cloned().collect()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn running(&self) -> usize {
        self.jobs.values().filter(|j| j.state == JobState::Running).count()
    }
}

pub trait JobExecutor: Send + Sync {
    fn execute(&self, request: &JobRequest) -> Result<JobOutput, GenError>;
    /// True when requests must not run concurrently.
    fn serial_only(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QueueConfig {
    pub workers: usize,
    pub backlog: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            workers: DEFAULT_WORKERS,
            backlog: DEFAULT_BACKLOG,
        }
    }
}

/// Called with every job snapshot after each state change, in order.
pub type JobObserver = Box<dyn Fn(&GenerationJob) + Send + Sync>;

struct Inner {
    table: JobTable,
    shutdown: bool,
}

struct Shared {
    inner: Mutex<Inner>,
    changed: Condvar,
    observers: RwLock<Vec<JobObserver>>,
    executor: Arc<dyn JobExecutor>,
    clock: Arc<dyn Clock>,
    serial: Option<Mutex<()>>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("job table lock poisoned")
    }

    // Runs with the table lock held so observers see changes in order.
    fn publish(&self, job: &GenerationJob) {
        for observer in self.observers.read().expect("observer lock poisoned").iter() {
            observer(job);
        }
    }
}

pub struct JobQueue {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl JobQueue {
    pub fn new(executor: Arc<dyn JobExecutor>, config: QueueConfig, clock: Arc<dyn Clock>) -> Self {
        let serial = executor.serial_only().then(|| Mutex::new(()));
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner {
                table: JobTable::new(config.backlog),
                shutdown: false,
            }),
            changed: Condvar::new(),
            observers: RwLock::new(Vec::new()),
            executor,
            clock,
            serial,
        });
        let workers = (0..config.workers.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("gen-worker-{i}"))
                    .spawn(move || worker(&shared))
                    .expect("spawning a worker thread")
            })
            .collect();
        Self { shared, workers }
    }

    pub fn subscribe(&self, observer: JobObserver) {
        self.shared
            .observers
            .write()
            .expect("observer lock poisoned")
            .push(observer);
    }

    pub fn submit(&self, request: JobRequest) -> Result<GenerationJob, JobError> {
        let mut inner = self.shared.lock();
        let job = inner.table.submit(request, self.shared.clock.now())?;
        self.shared.publish(&job);
        self.shared.changed.notify_all();
        Ok(job)
    }

    pub fn cancel(&self, job_id: &str) -> Result<GenerationJob, JobError> {
        let mut inner = self.shared.lock();
        let job = inner.table.cancel(job_id, self.shared.clock.now())?;
        self.shared.publish(&job);
        self.shared.changed.notify_all();
        Ok(job)
    }

    pub fn get(&self, job_id: &str) -> Option<GenerationJob> {
        self.shared.lock().table.get(job_id).cloned()
    }

    pub fn list(&self) -> Vec<GenerationJob> {
        self.shared.lock().table.list()
    }

    /// Blocks until the job is terminal or `timeout` passes; returns the latest snapshot.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<GenerationJob, JobError> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        loop {
            let job = inner
                .table
                .get(job_id)
                .cloned()
                .ok_or_else(|| JobError::UnknownJob(job_id.to_string()))?;
            let now = Instant::now();
            if job.state.is_terminal() || now >= deadline {
                return Ok(job);
            }
            inner = self
                .shared
                .changed
                .wait_timeout(inner, deadline - now)
                .expect("job table lock poisoned")
                .0;
        }
    }

    /// Blocks until nothing is queued or running, or `timeout` passes. True if idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        loop {
            if inner.table.queued() == 0 && inner.table.running() == 0 {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            inner = self
                .shared
                .changed
                .wait_timeout(inner, deadline - now)
                .expect("job table lock poisoned")
                .0;
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.changed.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker(shared: &Shared) {
    loop {
        let job = {
            let mut inner = shared.lock();
            loop {
                if inner.shutdown {
                    return;
                }
                if let Some(job) = inner.table.claim(shared.clock.now()) {
                    shared.publish(&job);
                    break job;
                }
                inner = shared.changed.wait(inner).expect("job table lock poisoned");
            }
        };
        let outcome = {
            let _serial = shared.serial.as_ref().map(|m| m.lock().expect("serial lock poisoned"));
            shared.executor.execute(&job.request)
        };
        let mut inner = shared.lock();
        match inner.table.finish(&job.job_id, outcome, shared.clock.now()) {
            Ok(Some(done)) => shared.publish(&done),
            Ok(None) => log::debug!("dropping result of cancelled job {}", job.job_id),
            Err(e) => log::error!("finishing job {}: {e}", job.job_id),
        }
        shared.changed.notify_all();
    }
}
