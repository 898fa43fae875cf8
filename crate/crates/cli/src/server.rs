//! Interactive labeling session: the solver runs on its own thread against a
//! [`LabelQueue`], and the HTTP API hands its pending requests to a human.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use erq_core::oracle::{AnswerOutcome, LabelQueue, LabelRequest, LabelSource, PairViewer, Phase};
use erq_core::solvers::{export, solve, SolutionExport, SolverConfig};
use erq_core::{Label, Solution, SolverKind, Workload};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const DEFAULT_BATCH: usize = 10;

#[derive(Clone, Debug)]
pub enum Status {
    Running,
    Done(Box<(Solution, SolutionExport)>),
    Failed(String),
}

pub struct Session {
    workload: Arc<Workload>,
    queue: Arc<LabelQueue>,
    source: Arc<LabelSource>,
    batch_size: usize,
    status: Mutex<Status>,
    solver: Mutex<Option<JoinHandle<()>>>,
}

/// Called once on the solver thread when it finishes.
pub type OnDone = Box<dyn FnOnce(&Status) + Send>;

pub struct SessionOptions {
    pub solver: SolverKind,
    pub config: SolverConfig,
    pub journal: Option<PathBuf>,
    pub viewer: Option<Arc<dyn PairViewer>>,
    pub batch_size: usize,
    pub on_done: Option<OnDone>,
}

impl SessionOptions {
    pub fn new(solver: SolverKind, config: SolverConfig) -> Self {
        Self {
            solver,
            config,
            journal: None,
            viewer: None,
            batch_size: DEFAULT_BATCH,
            on_done: None,
        }
    }
}

impl Session {
    /// Starts the solver; it blocks on the queue until answers arrive.
    pub fn start(workload: Arc<Workload>, options: SessionOptions) -> anyhow::Result<Arc<Self>> {
        let queue = LabelQueue::new();
        let mut source = LabelSource::interactive(queue.clone(), workload.len());
        if let Some(viewer) = options.viewer {
            source = source.with_viewer(viewer);
        }
        if let Some(path) = &options.journal {
            source = source.with_journal(path)?;
            log::info!("journal {} holds {} answers", path.display(), source.asked_count());
        }
        let session = Arc::new(Self {
            workload,
            queue,
            source: Arc::new(source),
            batch_size: options.batch_size.max(1),
            status: Mutex::new(Status::Running),
            solver: Mutex::new(None),
        });
        let worker = session.clone();
        let (kind, config, on_done) = (options.solver, options.config, options.on_done);
        let handle = std::thread::Builder::new()
            .name("solver".into())
            .spawn(move || {
                let status = match solve(kind, &worker.workload, &config, &worker.source) {
                    Ok(solution) => {
                        let exported = export(&solution, &worker.workload, &config);
                        Status::Done(Box::new((solution, exported)))
                    }
                    Err(e) => {
                        log::error!("solver stopped: {e}");
                        Status::Failed(e.to_string())
                    }
                };
                if let Some(f) = on_done {
                    f(&status);
                }
                *worker.lock_status() = status;
            })?;
        *session.solver.lock().unwrap_or_else(|e| e.into_inner()) = Some(handle);
        Ok(session)
    }

    fn lock_status(&self) -> MutexGuard<'_, Status> {
        self.status.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> Status {
        self.lock_status().clone()
    }

    pub fn source(&self) -> &LabelSource {
        &self.source
    }

    pub fn queue(&self) -> &LabelQueue {
        &self.queue
    }

    /// Aborts a running solver and waits for its thread.
    pub fn shutdown(&self, reason: &str) {
        self.queue.close(reason);
        let handle = self.solver.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    pub fn progress(&self) -> ProgressView {
        let status = self.status();
        let progress = self.source.progress();
        let asked = self.source.asked_count();
        let phase = match (&status, progress.phase) {
            (Status::Done(_), _) => "done",
            (Status::Failed(_), _) => "failed",
            (Status::Running, None) => "starting",
            (Status::Running, Some(Phase::Sampling)) => "sampling",
            (Status::Running, Some(Phase::Verification)) => "verification",
        };
        let total_estimate = match &status {
            Status::Running => {
                let unanswered_in_bounds = progress.bounds.map_or(0, |(lo, hi)| {
                    self.workload.pairs()[self.workload.span(lo..hi)]
                        .iter()
                        .filter(|p| self.source.known(&p.id).is_none())
                        .count()
                });
                asked + unanswered_in_bounds.max(self.queue.pending_len())
            }
            _ => asked,
        };
        ProgressView {
            asked,
            total_estimate,
            phase,
            current_bounds: progress.bounds.map(|(lower, upper)| Bounds { lower, upper }),
        }
    }
}

/// Half-open subset range of the current human region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: usize,
    pub upper: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressView {
    pub asked: usize,
    pub total_estimate: usize,
    pub phase: &'static str,
    pub current_bounds: Option<Bounds>,
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelPost {
    pub pair_id: String,
    pub label: Label,
}

async fn next_tasks(State(s): State<Arc<Session>>, Query(q): Query<NextQuery>) -> Json<Vec<LabelRequest>> {
    Json(s.queue.pending(q.limit.unwrap_or(s.batch_size)))
}

async fn post_label(State(s): State<Arc<Session>>, Json(body): Json<LabelPost>) -> Response {
    let outcome = match s.queue.answer(&body.pair_id, body.label) {
        // Answers restored from a journal never pass through the queue.
        AnswerOutcome::Unknown if s.source.known(&body.pair_id).is_some() => AnswerOutcome::Duplicate,
        other => other,
    };
    match outcome {
        AnswerOutcome::Accepted | AnswerOutcome::Duplicate => {
            let status = if outcome == AnswerOutcome::Accepted { "accepted" } else { "duplicate" };
            Json(json!({ "status": status, "progress": s.progress() })).into_response()
        }
        AnswerOutcome::Unknown => (
            StatusCode::CONFLICT,
            Json(json!({ "error": format!("pair `{}` is not pending", body.pair_id) })),
        )
            .into_response(),
    }
}

async fn get_progress(State(s): State<Arc<Session>>) -> Json<ProgressView> {
    Json(s.progress())
}

async fn get_solution(State(s): State<Arc<Session>>) -> Response {
    match s.status() {
        Status::Done(done) => Json(&done.1).into_response(),
        Status::Failed(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": e, "phase": "failed" })),
        )
            .into_response(),
        Status::Running => (
            StatusCode::NOT_FOUND,
            Json(json!({ "error": "solution not ready", "phase": s.progress().phase })),
        )
            .into_response(),
    }
}

/// API routes under `/api`, plus the UI bundle from `ui_dir` when given.
pub fn router(session: Arc<Session>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_tasks))
        .route("/labels", post(post_label))
        .route("/progress", get(get_progress))
        .route("/solution", get(get_solution))
        .with_state(session);
    let app = Router::new().nest("/api", api);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}
