//! JSON-over-HTTP front end. Sessions hold a live simulator state and are
//! single-writer: a request that finds its session busy gets 409 instead of
//! waiting. `finish` and `generate` honour an `Idempotency-Key` header.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex as SessionLock;
use tower_http::services::ServeDir;

use ebc_core::codegen::{BackendKind, CodegenError};
use ebc_core::config::WorkspaceError;
use ebc_core::dsl::TraceEntry;
use ebc_core::encoder::{derive_demo_id, record_event, ActionEvent, Demonstration};
use ebc_core::sim::{apply_action, current_tree, reset, Action, Outcome, SimError, SimState};
use ebc_core::ui::{enumerate_interactive, NodePath, UiTree};

use crate::pipeline::{state_summary, Pipeline, PipelineError};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    Unprocessable { message: String, diagnostics: Vec<String> },
    #[error("{0}")]
    BadGateway(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn unprocessable(message: impl ToString) -> Self {
        ApiError::Unprocessable {
            message: message.to_string(),
            diagnostics: Vec::new(),
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadGateway(_) => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownApp(_)
            | PipelineError::UnknownFunction(_)
            | PipelineError::Workspace(WorkspaceError::UnknownDemo(_)) => ApiError::NotFound(e.to_string()),
            PipelineError::Codegen(CodegenError::GenerationFailed { diagnostics, .. }) => ApiError::Unprocessable {
                message: "generated script failed validation".into(),
                diagnostics,
            },
            PipelineError::Codegen(CodegenError::BackendUnavailable(_)) => ApiError::BadGateway(e.to_string()),
            PipelineError::Workspace(_) | PipelineError::Config(_) => ApiError::Internal(e.to_string()),
            PipelineError::Input { .. }
            | PipelineError::Arguments(_)
            | PipelineError::Encode(_)
            | PipelineError::Codegen(_)
            | PipelineError::Fusion(_)
            | PipelineError::Eval(_)
            | PipelineError::Sim(_) => ApiError::unprocessable(e),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        ApiError::unprocessable(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::unprocessable(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let diagnostics = match &self {
            ApiError::Unprocessable { diagnostics, .. } => diagnostics.clone(),
            _ => Vec::new(),
        };
        let body = json!({ "error": self.to_string(), "diagnostics": diagnostics });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Recording,
    Replay,
}

pub struct Session {
    pub session_id: String,
    pub app_id: String,
    pub mode: SessionMode,
    pub state: SimState,
    pub actions: Vec<Action>,
    pub events: Vec<ActionEvent>,
    /// Demo id once the recording has been finished.
    pub finished: Option<String>,
}

struct ReplayCursor {
    function: String,
    call: String,
    entries: Vec<TraceEntry>,
    next: usize,
    error: Option<String>,
    final_state: String,
}

enum Stored {
    InFlight { request: Value },
    Done { request: Value, status: StatusCode, body: Value },
}

/// Everything the handlers share.
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    sessions: Mutex<HashMap<String, Arc<SessionLock<Session>>>>,
    replays: Mutex<HashMap<String, Arc<SessionLock<ReplayCursor>>>>,
    idempotency: Mutex<HashMap<(String, String), Stored>>,
    next_id: AtomicU64,
}

fn locked<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>) -> Arc<Self> {
        Arc::new(AppState {
            pipeline,
            sessions: Mutex::new(HashMap::new()),
            replays: Mutex::new(HashMap::new()),
            idempotency: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// The session's lock, for callers that want to hold it (tests use this
    /// to simulate a concurrent writer).
    pub fn session(&self, id: &str) -> ApiResult<Arc<SessionLock<Session>>> {
        locked(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session id {id:?}")))
    }

    fn writable(&self, id: &str) -> ApiResult<tokio::sync::OwnedMutexGuard<Session>> {
        self.session(id)?
            .try_lock_owned()
            .map_err(|_| ApiError::Conflict(format!("session {id:?} is busy with another request")))
    }

    /// Runs `work` at most once per (scope, key). A retry with the same key
    /// and request gets the stored response; the same key with a different
    /// request is rejected. Failures are not stored, so they can be retried.
    async fn idempotent<F, Fut>(&self, scope: &str, headers: &HeaderMap, request: Value, work: F) -> ApiResult<Response>
    where
        F: FnOnce() -> Fut,
        Fut: Future<Output = ApiResult<(StatusCode, Value)>>,
    {
        let key = match headers.get(IDEMPOTENCY_HEADER) {
            None => {
                let (status, body) = work().await?;
                return Ok((status, Json(body)).into_response());
            }
            Some(v) => v
                .to_str()
                .map_err(|_| ApiError::unprocessable("idempotency key must be visible ASCII"))?
                .to_string(),
        };
        let slot = (scope.to_string(), key);
        {
            let mut table = locked(&self.idempotency);
            match table.get(&slot) {
                Some(Stored::Done { request: seen, status, body }) => {
                    if *seen != request {
                        return Err(ApiError::unprocessable("idempotency key was used with a different request"));
                    }
                    let mut response = (*status, Json(body.clone())).into_response();
                    response.headers_mut().insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
                    return Ok(response);
                }
                Some(Stored::InFlight { request: seen }) => {
                    return Err(if *seen == request {
                        ApiError::Conflict("a request with this idempotency key is still running".into())
                    } else {
                        ApiError::unprocessable("idempotency key was used with a different request")
                    });
                }
                None => {
                    table.insert(slot.clone(), Stored::InFlight { request: request.clone() });
                }
            }
        }
        let result = work().await;
        let mut table = locked(&self.idempotency);
        match result {
            Ok((status, body)) => {
                table.insert(
                    slot,
                    Stored::Done {
                        request,
                        status,
                        body: body.clone(),
                    },
                );
                Ok((status, Json(body)).into_response())
            }
            Err(e) => {
                table.remove(&slot);
                Err(e)
            }
        }
    }
}

async fn blocking<T: Send + 'static>(work: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize)]
pub struct InteractiveElement {
    pub index: usize,
    pub path: NodePath,
    pub node_class: String,
    pub text: String,
    pub resource_id: String,
    pub bounds: String,
    pub clickable: bool,
    pub editable: bool,
    pub scrollable: bool,
    pub annotation: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScreenPayload {
    pub app_id: String,
    pub screen_id: String,
    pub step_counter: u64,
    pub tree: UiTree,
    pub interactive: Vec<InteractiveElement>,
}

pub fn screen_payload(state: &SimState) -> ScreenPayload {
    let tree = current_tree(state);
    let paths = tree.interactive_paths();
    let interactive = enumerate_interactive(&tree)
        .into_iter()
        .zip(paths)
        .map(|((index, node), path)| InteractiveElement {
            index,
            path,
            node_class: node.node_class.clone(),
            text: node.text.clone(),
            resource_id: node.resource_id.clone(),
            bounds: node.bounds.to_string(),
            clickable: node.clickable,
            editable: node.editable,
            scrollable: node.scrollable,
            annotation: node.annotation.clone(),
        })
        .collect();
    ScreenPayload {
        app_id: state.app_id.clone(),
        screen_id: tree.screen_id.clone(),
        step_counter: state.step_counter,
        tree,
        interactive,
    }
}

async fn list_apps(State(s): State<Arc<AppState>>) -> Json<Value> {
    let apps: Vec<Value> = s
        .pipeline
        .apps()
        .map(|a| {
            json!({
                "app_id": a.app_id,
                "app_name": a.meta.app_name,
                "description": a.meta.description,
                "domain_tag": a.meta.domain_tag,
                "start_screen": a.start_screen,
                "screens": a.screens.keys().collect::<Vec<_>>(),
                "goals": a.goals.keys().collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(Value::Array(apps))
}

#[derive(Debug, Deserialize)]
struct NewSession {
    app_id: String,
    #[serde(default)]
    mode: SessionMode,
}

async fn create_session(
    State(s): State<Arc<AppState>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body?;
    let app = s.pipeline.app(&req.app_id)?;
    let session_id = s.fresh_id("session");
    let state = reset(&app);
    let screen = screen_payload(&state);
    let session = Session {
        session_id: session_id.clone(),
        app_id: req.app_id.clone(),
        mode: req.mode,
        state,
        actions: Vec::new(),
        events: Vec::new(),
        finished: None,
    };
    locked(&s.sessions).insert(session_id.clone(), Arc::new(SessionLock::new(session)));
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": session_id, "app_id": req.app_id, "mode": req.mode, "screen": screen })),
    ))
}

async fn get_screen(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ScreenPayload>> {
    let session = s.session(&id)?;
    let session = session.lock().await;
    Ok(Json(screen_payload(&session.state)))
}

async fn post_action(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Action>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let mut session = s.writable(&id)?;
    let Json(action) = body?;
    if session.finished.is_some() {
        return Err(ApiError::Conflict(format!("session {id:?} has already been finished")));
    }
    let event = record_event(&session.state, &action)?;
    let (next, outcome): (SimState, Outcome) = apply_action(&session.state, &action)?;
    session.state = next;
    if session.mode == SessionMode::Recording {
        session.actions.push(action);
        session.events.push(event);
    }
    Ok(Json(json!({
        "outcome": outcome,
        "recorded_steps": session.events.len(),
        "screen": screen_payload(&session.state),
    })))
}

#[derive(Debug, Serialize, Deserialize)]
struct FinishRequest {
    instruction: String,
}

async fn finish_session(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<FinishRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let request = json!({ "session_id": id, "instruction": req.instruction });
    let state = Arc::clone(&s);
    s.idempotent("finish", &headers, request, || async move {
        let mut session = state.writable(&id)?;
        if session.mode != SessionMode::Recording {
            return Err(ApiError::Conflict(format!("session {id:?} is not recording")));
        }
        if let Some(demo_id) = &session.finished {
            return Err(ApiError::Conflict(format!("session {id:?} was already finished as {demo_id:?}")));
        }
        let demo = Demonstration {
            demo_id: derive_demo_id(&session.app_id, &req.instruction, &session.actions),
            app_id: session.app_id.clone(),
            instruction: req.instruction.clone(),
            events: session.events.clone(),
        };
        let pipeline = Arc::clone(&state.pipeline);
        let encoded = blocking(move || Ok(pipeline.store_demo(&demo)?)).await?;
        session.finished = Some(encoded.demo_id.clone());
        Ok((
            StatusCode::CREATED,
            json!({ "demo_id": encoded.demo_id, "steps": encoded.steps.len(), "encoded": encoded }),
        ))
    })
    .await
}

async fn get_demo(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let pipeline = Arc::clone(&s.pipeline);
    let encoded = blocking(move || Ok(pipeline.encoded_demo(&id)?)).await?;
    Ok(Json(serde_json::to_value(encoded).expect("encoded demo serializes")))
}

/// Backend names accepted on the wire.
pub fn parse_backend(name: &str) -> Option<BackendKind> {
    match name {
        "stub" | "deterministic" | "deterministic_stub" => Some(BackendKind::DeterministicStub),
        "remote" => Some(BackendKind::Remote),
        _ => None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerateRequest {
    demo_id: String,
    #[serde(default)]
    backend: Option<String>,
}

async fn post_generate(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let backend = match req.backend.as_deref() {
        None => None,
        Some(name) => Some(
            parse_backend(name)
                .ok_or_else(|| ApiError::unprocessable(format!("unknown backend {name:?}; use stub or remote")))?,
        ),
    };
    let request = serde_json::to_value(&req).expect("request serializes");
    let pipeline = Arc::clone(&s.pipeline);
    s.idempotent("generate", &headers, request, || async move {
        let (generated, function) = blocking(move || Ok(pipeline.generate(&req.demo_id, backend)?)).await?;
        Ok((
            StatusCode::CREATED,
            json!({
                "generated": generated,
                "function": { "name": function.name, "signature": function.signature(), "revisions": function.history.len() },
            }),
        ))
    })
    .await
}

async fn list_functions(State(s): State<Arc<AppState>>) -> Json<Value> {
    let functions: Vec<Value> = s
        .pipeline
        .functions()
        .iter()
        .map(|f| {
            json!({
                "name": f.name,
                "app_id": f.app_id,
                "signature": f.signature(),
                "description": f.description,
                "params": f.params,
                "revisions": f.history.len(),
            })
        })
        .collect();
    Json(Value::Array(functions))
}

async fn get_function(State(s): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let f = s.pipeline.function(&name)?;
    let source = f.history.last().map(|r| r.source.clone()).unwrap_or_default();
    Ok(Json(json!({ "signature": f.signature(), "source": source, "function": f })))
}

async fn delete_function(State(s): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let pipeline = Arc::clone(&s.pipeline);
    let removed = blocking(move || Ok(pipeline.delete_function(&name)?)).await?;
    Ok(Json(json!({ "deleted": removed.name })))
}

#[derive(Debug, Deserialize)]
struct TaskRequest {
    instruction: String,
    #[serde(default)]
    app_id: Option<String>,
}

/// Routes and executes a task, answering with newline-delimited JSON: a
/// `plan` event, one `step` event per executed primitive, then `finished`.
async fn run_task(State(s): State<Arc<AppState>>, body: Result<Json<TaskRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let pipeline = Arc::clone(&s.pipeline);
    let result = blocking(move || Ok(pipeline.run_task(&req.instruction, req.app_id.as_deref())?)).await?;
    let mut events = vec![json!({ "event": "plan", "plan": result.plan })];
    events.extend(
        result
            .entries
            .iter()
            .enumerate()
            .map(|(index, entry)| json!({ "event": "step", "index": index, "entry": entry })),
    );
    events.push(json!({
        "event": "finished",
        "success": result.error.is_none(),
        "calls": result.calls,
        "error": result.error,
        "final_state": state_summary(&result.final_state),
    }));
    let lines = events
        .into_iter()
        .map(|e| Ok::<_, std::convert::Infallible>(format!("{e}\n")));
    let mut response = Body::from_stream(futures_util::stream::iter(lines)).into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    Ok(response)
}

#[derive(Debug, Default, Deserialize)]
struct StepRequest {
    /// Continues an existing replay; omitted to start one.
    #[serde(default)]
    replay_id: Option<String>,
    #[serde(default)]
    args: BTreeMap<String, Value>,
}

fn arg_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Single-step execution for the replay view: the first call runs the
/// function and returns its first trace entry, each later call with the
/// returned `replay_id` the next one. The last step carries `done`, the
/// final state and any error.
async fn replay_step(
    State(s): State<Arc<AppState>>,
    Path(function): Path<String>,
    body: Option<Json<StepRequest>>,
) -> ApiResult<Json<Value>> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let (replay_id, cursor) = match req.replay_id {
        Some(id) => {
            let cursor = locked(&s.replays)
                .get(&id)
                .cloned()
                .ok_or_else(|| ApiError::NotFound(format!("unknown replay id {id:?}")))?;
            (id, cursor)
        }
        None => {
            let args: BTreeMap<String, String> = req.args.iter().map(|(k, v)| (k.clone(), arg_text(v))).collect();
            let pipeline = Arc::clone(&s.pipeline);
            let name = function.clone();
            let run = blocking(move || Ok(pipeline.replay(&name, &args)?)).await?;
            let id = s.fresh_id("replay");
            let cursor = Arc::new(SessionLock::new(ReplayCursor {
                call: run.call(),
                function: run.function,
                entries: run.entries,
                next: 0,
                error: run.error,
                final_state: state_summary(&run.final_state),
            }));
            locked(&s.replays).insert(id.clone(), Arc::clone(&cursor));
            (id, cursor)
        }
    };
    let mut cursor = cursor
        .try_lock_owned()
        .map_err(|_| ApiError::Conflict(format!("replay {replay_id:?} is busy with another request")))?;
    if cursor.function != function {
        return Err(ApiError::Conflict(format!(
            "replay {replay_id:?} runs {:?}, not {function:?}",
            cursor.function
        )));
    }
    let index = cursor.next;
    let entry = cursor.entries.get(index).cloned();
    if entry.is_some() {
        cursor.next += 1;
    }
    let done = cursor.next >= cursor.entries.len();
    let mut body = json!({
        "replay_id": replay_id,
        "function": cursor.function,
        "call": cursor.call,
        "index": index,
        "total": cursor.entries.len(),
        "entry": entry,
        "done": done,
    });
    if done {
        body["success"] = json!(cursor.error.is_none());
        body["error"] = json!(cursor.error);
        body["final_state"] = json!(cursor.final_state);
    }
    Ok(Json(body))
}

/// The API routes; with `ui_dir`, every other path is served from it.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/apps", get(list_apps))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/screen", get(get_screen))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/finish", post(finish_session))
        .route("/demos/{id}", get(get_demo))
        .route("/generate", post(post_generate))
        .route("/functions", get(list_functions))
        .route("/functions/{name}", get(get_function).delete(delete_function))
        .route("/tasks/run", post(run_task))
        .route("/replay/{function}/step", post(replay_step))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(pipeline: Arc<Pipeline>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(pipeline), ui_dir)).await
}
