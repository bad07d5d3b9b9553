//! In-memory simulation job queue.
//!
//! Jobs run one at a time in submission order on a blocking worker; the
//! store is shared with request handlers behind a mutex.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use hybridctl_core::simlab::SimResult;
use tokio::sync::mpsc;

use crate::api::{JobRecord, JobStatus, SimulationPlan};
use crate::error::ApiResult;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

struct Inner {
    jobs: HashMap<String, JobRecord>,
    next: u64,
    ids: RandomState,
}

#[derive(Clone)]
pub struct JobStore {
    inner: Arc<Mutex<Inner>>,
    queue: mpsc::UnboundedSender<(String, SimulationPlan)>,
}

impl JobStore {
    /// Creates the store and spawns its worker on the current tokio runtime.
    pub fn start() -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<(String, SimulationPlan)>();
        let store = Self {
            inner: Arc::new(Mutex::new(Inner { jobs: HashMap::new(), next: 0, ids: RandomState::new() })),
            queue: tx,
        };
        let worker = store.clone();
        tokio::spawn(async move {
            while let Some((id, plan)) = rx.recv().await {
                worker.mark_running(&id);
                let reporter = worker.clone();
                let job = id.clone();
                let outcome = tokio::task::spawn_blocking(move || plan.run(&|f| reporter.set_progress(&job, f))).await;
                match outcome {
                    Ok(result) => worker.finish(&id, result),
                    Err(e) => worker.finish(&id, Err(crate::error::ApiError::new(crate::error::ErrorKind::Internal, e.to_string()))),
                }
            }
        });
        store
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panic while holding the lock leaves plain data behind; keep serving it
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn submit(&self, plan: SimulationPlan) -> JobRecord {
        let record = {
            let mut inner = self.lock();
            inner.next += 1;
            let id = format!("job-{:016x}", inner.ids.hash_one(inner.next));
            let record = JobRecord {
                id: id.clone(),
                status: JobStatus::Queued,
                progress: 0.0,
                submitted_at: now_ms(),
                started_at: None,
                finished_at: None,
                results: None,
                error: None,
            };
            inner.jobs.insert(id, record.clone());
            record
        };
        if self.queue.send((record.id.clone(), plan)).is_err() {
            self.finish(&record.id, Err(crate::error::ApiError::new(crate::error::ErrorKind::Internal, "job worker stopped")));
        }
        record
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.lock().jobs.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mark_running(&self, id: &str) {
        let mut inner = self.lock();
        if let Some(job) = inner.jobs.get_mut(id) {
            if job.status.can_move_to(JobStatus::Running) {
                job.status = JobStatus::Running;
                job.started_at = Some(now_ms());
            }
        }
    }

    /// Progress only moves forward and only while the job runs.
    fn set_progress(&self, id: &str, fraction: f64) {
        let mut inner = self.lock();
        if let Some(job) = inner.jobs.get_mut(id) {
            if job.status == JobStatus::Running && fraction.is_finite() {
                job.progress = job.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }

    fn finish(&self, id: &str, result: ApiResult<Vec<SimResult>>) {
        let mut inner = self.lock();
        let Some(job) = inner.jobs.get_mut(id) else { return };
        let next = if result.is_ok() { JobStatus::Done } else { JobStatus::Failed };
        if !job.status.can_move_to(next) {
            return;
        }
        job.status = next;
        job.finished_at = Some(now_ms());
        match result {
            Ok(r) => {
                job.progress = 1.0;
                job.results = Some(r);
            }
            Err(e) => job.error = Some(e.message),
        }
    }
}
