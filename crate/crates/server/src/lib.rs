//! HTTP annotation service for a live active-learning session.
//!
//! One session per server. The learner runs on its own thread and talks to
//! annotators through a [`TaskBoard`]; HTTP handlers only touch the board and
//! a small status record. Everything needed to pick a session back up after
//! a restart lives in the state directory:
//!
//! | file            | contents                                          |
//! |-----------------|---------------------------------------------------|
//! | `session.json`  | the start request                                 |
//! | `snapshot.json` | learner state after the last finished iteration   |
//! | `tasks.json`    | the current batch and any submitted labels        |
//! | `log.json`      | the session's experiment log                      |
//!
//! Endpoints (JSON bodies):
//!
//! - `GET /session/status`: [`SessionStatus`]; 404 without a session
//! - `GET /tasks/next`: lease a [`TaskView`]; 204 when nothing is open
//! - `POST /tasks/{id}/labels` `{"tags": [...]}`: 200, 422 `{reason, position}`, 404, 409
//! - `POST /session/start` [`StartRequest`]: status once the first batch is up; 409 if a session exists
//! - `POST /session/advance`: status; 409 while tasks are open
//!
//! POSTs carrying an `x-request-id` header are idempotent: a repeated id
//! gets the first response back without touching state again.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use seqal::active::{
    prepare_dataset, Clock, EvalMetrics, ExperimentConfig, ExperimentLog, HumanOracle, Learner,
    Phase, PreparedCorpus, SeedRun, Snapshot, SubmitError, TaskBoard,
};
use seqal::corpus::Tag;
use seqal::strategies::Strategy;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

/// Body of `POST /session/start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRequest {
    /// Must name exactly one strategy.
    pub config: ExperimentConfig,
    /// Which seed of the config to run.
    #[serde(default)]
    pub seed_index: usize,
}

impl StartRequest {
    fn strategy(&self) -> Result<Strategy, String> {
        self.config.validate().map_err(|e| e.to_string())?;
        match self.config.strategies.as_slice() {
            [s] => Ok(*s),
            _ => Err("a session runs exactly one strategy".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub token_f1: f64,
    pub sentence_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub iteration: usize,
    pub n_iterations: usize,
    pub phase: Phase,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub labeled: usize,
    pub pool: usize,
    pub open_tasks: usize,
    pub submitted_tasks: usize,
    pub latest_metrics: Option<EvalMetrics>,
    pub curve: Vec<CurvePoint>,
    pub error: Option<String>,
}

#[derive(Debug, Default)]
struct Progress {
    iteration: usize,
    labeled: usize,
    pool: usize,
    curve: Vec<CurvePoint>,
    latest: Option<EvalMetrics>,
    error: Option<String>,
}

/// A running session.
pub struct Session {
    request: StartRequest,
    strategy: Strategy,
    board: Arc<TaskBoard>,
    progress: Mutex<Progress>,
    dir: PathBuf,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    pub fn board(&self) -> &Arc<TaskBoard> {
        &self.board
    }

    pub fn status(&self) -> SessionStatus {
        let p = self.progress.lock().unwrap();
        let (open, submitted) = self.board.counts();
        SessionStatus {
            iteration: p.iteration,
            n_iterations: self.request.config.n_iterations,
            phase: self.board.phase(),
            strategy: self.strategy,
            batch_size: self.request.config.batch_size,
            labeled: p.labeled,
            pool: p.pool,
            open_tasks: open,
            submitted_tasks: submitted,
            latest_metrics: p.latest,
            curve: p.curve.clone(),
            error: p.error.clone(),
        }
    }

    fn observe(&self, learner: &Learner) {
        let mut p = self.progress.lock().unwrap();
        let s = learner.state();
        p.iteration = s.iteration;
        p.labeled = s.labeled.len();
        p.pool = s.pool.len();
        p.latest = s.history.last().map(|r| r.metrics);
        p.curve = s
            .history
            .iter()
            .map(|r| CurvePoint {
                iteration: r.iteration,
                token_f1: r.metrics.token.f1,
                sentence_accuracy: r.metrics.sentence_accuracy,
            })
            .collect();
    }

    /// Persists the learner and the session log, then refreshes the status.
    fn checkpoint(&self, learner: &Learner) -> seqal::Result<()> {
        learner.snapshot().save(&self.dir.join("snapshot.json"))?;
        let cfg = &self.request.config;
        let log = ExperimentLog::new(
            cfg,
            self.strategy,
            &learner.corpus().dataset,
            vec![SeedRun {
                seed_index: self.request.seed_index,
                seed: cfg.run_seed(self.request.seed_index),
                history: learner.history().to_vec(),
            }],
        );
        write_atomic(&self.dir.join("log.json"), log.to_json().as_bytes())?;
        self.observe(learner);
        Ok(())
    }

    fn fail(&self, e: &seqal::Error) {
        self.progress.lock().unwrap().error = Some(e.to_string());
        self.board.set_phase(Phase::Failed);
    }

    /// Closes the board and waits for the learner thread to stop.
    pub fn shutdown(&self) {
        self.board.close();
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> seqal::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn drive(session: Arc<Session>, mut learner: Learner) {
    let labels = learner.corpus().labels.clone();
    let mut oracle = HumanOracle::new(session.board.clone(), labels);
    let n = session.request.config.n_iterations;
    match learner.run(n, &mut oracle, |l| session.checkpoint(l)) {
        Ok(()) => session.board.set_phase(Phase::Finished),
        Err(seqal::Error::SessionClosed) => {}
        Err(e) => session.fail(&e),
    }
}

/// Shared server state.
pub struct AppState {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
    lease: Duration,
    session: Mutex<Option<Arc<Session>>>,
    replies: Mutex<HashMap<String, (StatusCode, Value)>>,
}

impl AppState {
    /// Opens `dir`, resuming the session persisted there if any.
    pub fn open(
        dir: impl Into<PathBuf>,
        clock: Arc<dyn Clock>,
        lease: Duration,
    ) -> seqal::Result<Arc<Self>> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let state = Arc::new(Self {
            dir,
            clock,
            lease,
            session: Mutex::new(None),
            replies: Mutex::new(HashMap::new()),
        });
        let saved = state.dir.join("session.json");
        if saved.exists() {
            let request: StartRequest = serde_json::from_slice(&std::fs::read(&saved)?)?;
            let session = state.launch(request)?;
            *state.session.lock().unwrap() = Some(session);
        }
        Ok(state)
    }

    pub fn session(&self) -> Option<Arc<Session>> {
        self.session.lock().unwrap().clone()
    }

    /// Builds (or resumes) the learner and starts its thread.
    fn launch(&self, request: StartRequest) -> seqal::Result<Arc<Session>> {
        let strategy = request.strategy().map_err(seqal::Error::Config)?;
        let cfg = &request.config;
        let corpus = Arc::new(PreparedCorpus::new(prepare_dataset(cfg)?, &cfg.templates)?);
        let snap_path = self.dir.join("snapshot.json");
        let learner = if snap_path.exists() {
            Learner::resume(corpus, Snapshot::load(&snap_path)?)?
        } else {
            cfg.learner(corpus, strategy, request.seed_index)?
        };
        let board = Arc::new(TaskBoard::new(
            self.clock.clone(),
            self.lease,
            Some(self.dir.join("tasks.json")),
        )?);
        let session = Arc::new(Session {
            request,
            strategy,
            board,
            progress: Mutex::new(Progress::default()),
            dir: self.dir.clone(),
            worker: Mutex::new(None),
        });
        session.checkpoint(&learner)?;
        let worker = {
            let session = session.clone();
            std::thread::spawn(move || drive(session, learner))
        };
        *session.worker.lock().unwrap() = Some(worker);
        Ok(session)
    }

    /// Stops the learner thread. The state directory is left as is.
    pub fn shutdown(&self) {
        if let Some(s) = self.session.lock().unwrap().take() {
            s.shutdown();
        }
    }
}

fn reply(status: StatusCode, body: Value) -> Response {
    (status, Json(body)).into_response()
}

fn no_session() -> (StatusCode, Value) {
    (StatusCode::NOT_FOUND, json!({ "error": "no session" }))
}

/// Runs `f` once per request id; repeats get the stored response.
async fn idempotent<F, Fut>(state: &AppState, headers: &HeaderMap, f: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: std::future::Future<Output = (StatusCode, Value)>,
{
    let key = headers
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    if let Some(k) = &key {
        if let Some((status, body)) = state.replies.lock().unwrap().get(k).cloned() {
            return reply(status, body);
        }
    }
    let (status, body) = f().await;
    if let Some(k) = key {
        state
            .replies
            .lock()
            .unwrap()
            .insert(k, (status, body.clone()));
    }
    reply(status, body)
}

async fn status(State(state): State<Arc<AppState>>) -> Response {
    match state.session() {
        Some(s) => reply(StatusCode::OK, json!(s.status())),
        None => {
            let (code, body) = no_session();
            reply(code, body)
        }
    }
}

async fn next_task(State(state): State<Arc<AppState>>) -> Response {
    let Some(session) = state.session() else {
        let (code, body) = no_session();
        return reply(code, body);
    };
    match session.board.next_task() {
        Some(task) => reply(StatusCode::OK, json!(task)),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct LabelsBody {
    tags: Vec<String>,
}

fn submit_labels(state: &AppState, id: usize, body: LabelsBody) -> (StatusCode, Value) {
    let Some(session) = state.session() else {
        return no_session();
    };
    let mut tags = Vec::with_capacity(body.tags.len());
    for (position, raw) in body.tags.iter().enumerate() {
        match raw.parse::<Tag>() {
            Ok(t) => tags.push(t),
            Err(e) => {
                return (
                    StatusCode::UNPROCESSABLE_ENTITY,
                    json!({ "reason": e.to_string(), "position": position }),
                )
            }
        }
    }
    match session.board.submit(id, tags) {
        Ok(()) => {
            let (open, _) = session.board.counts();
            (
                StatusCode::OK,
                json!({ "accepted": true, "task_id": id, "open_tasks": open }),
            )
        }
        Err(SubmitError::NotFound) => (StatusCode::NOT_FOUND, json!({ "error": "unknown task" })),
        Err(SubmitError::AlreadySubmitted) => (
            StatusCode::CONFLICT,
            json!({ "error": "task already submitted" }),
        ),
        Err(SubmitError::Invalid { position, reason }) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "reason": reason, "position": position }),
        ),
    }
}

async fn labels(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<usize>,
    headers: HeaderMap,
    Json(body): Json<LabelsBody>,
) -> Response {
    let st = state.clone();
    idempotent(
        &state,
        &headers,
        || async move { submit_labels(&st, id, body) },
    )
    .await
}

async fn start_session(state: Arc<AppState>, request: StartRequest) -> (StatusCode, Value) {
    if let Err(e) = request.strategy() {
        return (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e }));
    }
    let st = state.clone();
    let launched = tokio::task::spawn_blocking(move || {
        let mut slot = st.session.lock().unwrap();
        if slot.is_some() {
            return Err((
                StatusCode::CONFLICT,
                "a session is already running".to_string(),
            ));
        }
        let config_path = st.dir.join("session.json");
        let bytes = serde_json::to_vec_pretty(&request).expect("request serializes");
        write_atomic(&config_path, &bytes)
            .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        match st.launch(request) {
            Ok(s) => {
                *slot = Some(s.clone());
                Ok(s)
            }
            Err(e) => {
                let _ = std::fs::remove_file(&config_path);
                let code = match e {
                    seqal::Error::Config(_) | seqal::Error::Parse { .. } => {
                        StatusCode::UNPROCESSABLE_ENTITY
                    }
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                Err((code, e.to_string()))
            }
        }
    })
    .await
    .expect("launch task panicked");
    let session = match launched {
        Ok(s) => s,
        Err((code, msg)) => return (code, json!({ "error": msg })),
    };
    // Answer once the first batch is up (or the run ended without one).
    while session.board.phase() == Phase::Training {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    (StatusCode::OK, json!(session.status()))
}

async fn start(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(request): Json<StartRequest>,
) -> Response {
    let st = state.clone();
    idempotent(&state, &headers, || start_session(st, request)).await
}

async fn advance(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let st = state.clone();
    idempotent(&state, &headers, || async move {
        let Some(session) = st.session() else {
            return no_session();
        };
        let s = session.status();
        if s.open_tasks > 0 {
            return (
                StatusCode::CONFLICT,
                json!({ "error": format!("{} tasks still open", s.open_tasks) }),
            );
        }
        // The learner advances on its own once a batch is complete.
        (StatusCode::OK, json!(s))
    })
    .await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session/status", get(status))
        .route("/session/start", post(start))
        .route("/session/advance", post(advance))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/labels", post(labels))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
