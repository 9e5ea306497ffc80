//! JSON API over the run store for the review console.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use rubricon_core::engine::AggregateGrade;
use rubricon_core::model::Points;
use rubricon_core::store::{FinalGrade, ReviewTask, RunData, RunStore, RunSummary, StoreError, TaskDetail};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::UnknownRun(_) | StoreError::InvalidRunId(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            StoreError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            StoreError::AlreadyResolved(_) => (StatusCode::CONFLICT, "already_resolved"),
            StoreError::Locked(_) => (StatusCode::CONFLICT, "locked"),
            StoreError::InvalidPoints { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_points"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "store_error"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "store failure");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "invalid_body", r.body_text())
    }
}

pub struct AppState {
    store: RunStore,
    /// Resolutions go through one writer at a time.
    writes: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(store: RunStore) -> Arc<Self> {
        Arc::new(AppState {
            store,
            writes: tokio::sync::Mutex::new(()),
        })
    }

    async fn blocking<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&RunStore) -> Result<T, StoreError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || f(&state.store))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
            .map_err(ApiError::from)
    }
}

fn find_task_run(store: &RunStore, task_id: &str) -> Result<RunData, StoreError> {
    for run in store.list_runs()? {
        let data = store.load(&run.run_id)?;
        if data.task(task_id).is_some() {
            return Ok(data);
        }
    }
    Err(StoreError::UnknownTask(task_id.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueEntry {
    #[serde(flatten)]
    pub task: ReviewTask,
    pub aggregate: Option<AggregateGrade>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Queue {
    pub run_id: String,
    pub tasks: Vec<QueueEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolveBody {
    pub points: Points,
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub task: ReviewTask,
    pub final_grade: FinalGrade,
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Result<Json<Vec<RunSummary>>, ApiError> {
    Ok(Json(state.blocking(|s| s.list_runs()).await?))
}

async fn queue(State(state): State<Arc<AppState>>, Path(run_id): Path<String>) -> Result<Json<Queue>, ApiError> {
    let data = state.blocking(move |s| s.load(&run_id)).await?;
    let tasks = data
        .open_tasks()
        .map(|t| QueueEntry {
            task: t.clone(),
            aggregate: data.aggregate(&t.student_id, &t.problem_id).cloned(),
        })
        .collect();
    Ok(Json(Queue {
        run_id: data.run_id().to_string(),
        tasks,
    }))
}

async fn task(State(state): State<Arc<AppState>>, Path(task_id): Path<String>) -> Result<Json<TaskDetail>, ApiError> {
    let id = task_id.clone();
    let data = state.blocking(move |s| find_task_run(s, &id)).await?;
    data.task_detail(&task_id)
        .map(Json)
        .ok_or_else(|| StoreError::UnknownTask(task_id).into())
}

async fn resolve(
    State(state): State<Arc<AppState>>,
    Path(task_id): Path<String>,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> Result<Json<Resolved>, ApiError> {
    let Json(body) = body?;
    if body.reviewer.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            "reviewer must not be empty",
        ));
    }
    let _guard = state.writes.lock().await;
    let resolved = state
        .blocking(move |s| {
            let data = find_task_run(s, &task_id)?;
            let run_id = data.run_id().to_string();
            let task = s.resolve_review(&run_id, &task_id, body.points, &body.reviewer, &body.note)?;
            let data = s.load(&run_id)?;
            let final_grade = data
                .aggregate(&task.student_id, &task.problem_id)
                .map_or(FinalGrade::Pending, |a| data.final_grade(a));
            Ok(Resolved { task, final_grade })
        })
        .await?;
    Ok(Json(resolved))
}

async fn report(
    State(state): State<Arc<AppState>>,
    Path(run_id): Path<String>,
) -> Result<Json<rubricon_core::metrics::EvaluationReport>, ApiError> {
    let id = run_id.clone();
    match state.blocking(move |s| s.read_report(&id)).await? {
        Some(r) => Ok(Json(r)),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "no_report",
            format!("run `{run_id}` has not been evaluated"),
        )),
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// API routes, plus the console's static files under `/` when given.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}/queue", get(queue))
        .route("/api/runs/{id}/report", get(report))
        .route("/api/tasks/{id}", get(task))
        .route("/api/tasks/{id}/resolve", post(resolve))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
