//! HTTP API.
//!
//! Requests read an immutable [`Snapshot`] behind an `Arc`; a single worker
//! thread runs fine-tune jobs in arrival order and swaps in a new snapshot
//! only after the driver checkpoint has been committed.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vecest::checkpoint::CheckpointMeta;
use vecest::config::AppConfig;
use vecest::Result;

use crate::store::{check_driver_id, ModelStore};
use crate::workflow::{finetune_staged, EstimateError, EstimateRequest, Snapshot};

/// Callback invoked by the worker with the driver id.
pub type Hook = Arc<dyn Fn(&str) + Send + Sync>;

/// Test seams in the job worker.
#[derive(Clone, Default)]
pub struct JobHooks {
    /// Runs after fine-tuning and before the checkpoint is written.
    pub before_commit: Option<Hook>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    /// The driver had no labeled training trips.
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub driver_id: String,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct Jobs {
    next: u64,
    all: HashMap<String, JobStatus>,
    /// Driver id to its queued or running job.
    active: HashMap<String, String>,
}

pub struct AppState {
    store: ModelStore,
    config: AppConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    jobs: Mutex<Jobs>,
    queue: Mutex<mpsc::Sender<String>>,
}

impl AppState {
    /// Loads the store and starts the job worker.
    pub fn start(store: ModelStore, config: AppConfig, hooks: JobHooks) -> Result<Arc<Self>> {
        let snapshot = Snapshot::load(&store, &config)?;
        let (tx, rx) = mpsc::channel::<String>();
        let state = Arc::new(Self {
            store,
            config,
            snapshot: RwLock::new(Arc::new(snapshot)),
            jobs: Mutex::new(Jobs::default()),
            queue: Mutex::new(tx),
        });
        let weak = Arc::downgrade(&state);
        thread::spawn(move || {
            for job_id in rx {
                let Some(state) = weak.upgrade() else { break };
                state.run_job(&job_id, &hooks);
            }
        });
        Ok(state)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    pub fn job(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("job lock poisoned").all.get(id).cloned()
    }

    fn set_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        let mut jobs = self.jobs.lock().expect("job lock poisoned");
        let Some(job) = jobs.all.get_mut(id) else { return };
        f(job);
        if !matches!(job.state, JobState::Queued | JobState::Running) {
            let driver = job.driver_id.clone();
            jobs.active.remove(&driver);
        }
    }

    /// Queues a fine-tune job; `Err` carries the id of the job already
    /// active for the driver.
    fn submit(&self, driver_id: &str) -> std::result::Result<JobStatus, String> {
        let status = {
            let mut jobs = self.jobs.lock().expect("job lock poisoned");
            if let Some(active) = jobs.active.get(driver_id) {
                return Err(active.clone());
            }
            jobs.next += 1;
            let id = format!("job-{}", jobs.next);
            let status =
                JobStatus { id: id.clone(), driver_id: driver_id.into(), state: JobState::Queued, model_version: None, error: None };
            jobs.all.insert(id.clone(), status.clone());
            jobs.active.insert(driver_id.into(), id);
            status
        };
        if self.queue.lock().expect("queue lock poisoned").send(status.id.clone()).is_err() {
            self.set_job(&status.id, |j| {
                j.state = JobState::Failed;
                j.error = Some("job worker stopped".into());
            });
        }
        Ok(status)
    }

    fn run_job(&self, job_id: &str, hooks: &JobHooks) {
        let Some(job) = self.job(job_id) else { return };
        self.set_job(job_id, |j| j.state = JobState::Running);
        match self.fine_tune(&job.driver_id, hooks) {
            Ok(Some(meta)) => {
                info!("{job_id}: driver {} now at {}", job.driver_id, meta.tensor_sha256);
                self.set_job(job_id, |j| {
                    j.state = JobState::Succeeded;
                    j.model_version = Some(meta.tensor_sha256);
                })
            }
            Ok(None) => self.set_job(job_id, |j| j.state = JobState::Skipped),
            Err(e) => {
                error!("{job_id}: {e}");
                self.set_job(job_id, |j| {
                    j.state = JobState::Failed;
                    j.error = Some(e.to_string());
                })
            }
        }
    }

    fn fine_tune(&self, driver_id: &str, hooks: &JobHooks) -> Result<Option<CheckpointMeta>> {
        let snap = self.snapshot();
        let global = snap.global.clone().ok_or_else(|| vecest::Error::Checkpoint("no global checkpoint".into()))?;
        let history = snap
            .histories
            .get(driver_id)
            .ok_or_else(|| vecest::Error::InvalidData(format!("driver {driver_id} has no trips")))?;
        let Some((params, info)) = finetune_staged(&self.config, &global, &snap.network, history)? else {
            return Ok(None);
        };
        if let Some(hook) = &hooks.before_commit {
            hook(driver_id);
        }
        let meta = self.store.save_driver(driver_id, &global.model, &params, info)?;
        let loaded = self
            .store
            .load_driver(driver_id)?
            .ok_or_else(|| vecest::Error::Checkpoint("committed checkpoint vanished".into()))?;
        let mut slot = self.snapshot.write().expect("snapshot lock poisoned");
        let next = slot.with_driver(driver_id, Arc::new(loaded));
        *slot = Arc::new(next);
        Ok(Some(meta))
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/network", get(network))
        .route("/estimate", post(estimate))
        .route("/drivers/:id/model", get(driver_model))
        .route("/drivers/:id/finetune", post(submit_finetune))
        .route("/jobs/:id", get(job_status))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.snapshot();
    Json(json!({
        "status": "ok",
        "global_model": snap.global.as_ref().map(|g| g.meta.tensor_sha256.clone()),
        "driver_models": snap.drivers.len(),
    }))
    .into_response()
}

async fn network(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "segments": state.snapshot().network.segments() })).into_response()
}

#[derive(Debug, Default, Deserialize)]
struct FallbackQuery {
    #[serde(default)]
    fallback: bool,
}

async fn estimate(
    State(state): State<Arc<AppState>>,
    Query(q): Query<FallbackQuery>,
    Json(req): Json<EstimateRequest>,
) -> Response {
    let snap = state.snapshot();
    let result = tokio::task::spawn_blocking(move || snap.estimate(&req, q.fallback)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => {
            let status = match e {
                EstimateError::UnknownDriver(_) => StatusCode::NOT_FOUND,
                EstimateError::UnknownSegment(_) | EstimateError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
                EstimateError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
                EstimateError::Model(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn driver_model(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let snap = state.snapshot();
    if !snap.knows_driver(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown driver {id:?}"));
    }
    let (kind, meta) = match (snap.drivers.get(&id), &snap.global) {
        (Some(ck), _) => ("driver", &ck.meta),
        (None, Some(g)) => ("global", &g.meta),
        (None, None) => return error(StatusCode::SERVICE_UNAVAILABLE, "no global checkpoint has been trained"),
    };
    Json(json!({ "driver_id": id, "model": kind, "meta": meta })).into_response()
}

async fn submit_finetune(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if check_driver_id(&id).is_err() || !state.snapshot().histories.contains_key(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown driver {id:?}"));
    }
    if state.snapshot().global.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no global checkpoint has been trained");
    }
    match state.submit(&id) {
        Ok(job) => (StatusCode::ACCEPTED, Json(json!({ "job_id": job.id, "status": job.state }))).into_response(),
        Err(active) => (
            StatusCode::CONFLICT,
            Json(json!({ "error": format!("fine-tune already active for driver {id:?}"), "job_id": active })),
        )
            .into_response(),
    }
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.job(&id) {
        Some(job) => Json(job).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id:?}")),
    }
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
