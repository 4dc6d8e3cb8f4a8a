//! HTTP annotation service: serves the queried case to a labeler, accepts
//! labels, retrains and reports status and feature importance.
//!
//! ```text
//! POST /api/sessions                    {cases_file_ref, config} -> {session_id, status}
//! GET  /api/sessions/{id}/status
//! GET  /api/sessions/{id}/query
//! POST /api/sessions/{id}/labels        {case_id, risk} -> ack
//! GET  /api/sessions/{id}/importance?k=5
//! ```
//!
//! Label submissions for one session are serialized. Reads go to the last
//! published session value and never wait for a retrain. Each accepted label
//! is persisted before it is published or acknowledged; a client that lost
//! the acknowledgment may resend the same label and gets the original
//! acknowledgment back.

mod error;
pub mod session;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use aan_core::dataset::read_case_file;
use aan_core::importance::{CaseReport, ImportanceOptions};

pub use error::ServiceError;
pub use session::{
    Ack, OracleMode, QueryResponse, Session, SessionConfig, SessionState, StatusView, Submission,
};

/// Places where a test can make a label submission fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// After the retrain, before anything is written.
    BeforePersist,
    /// After the snapshot is durable, before the acknowledgment.
    AfterPersist,
}

/// Returns `true` to fail the submission at that point.
pub type FaultHook = Arc<dyn Fn(FaultPoint) -> bool + Send + Sync>;

struct Handle {
    writer: Mutex<()>,
    published: RwLock<Arc<Session>>,
}

impl Handle {
    fn new(session: Session) -> Arc<Self> {
        Arc::new(Self {
            writer: Mutex::new(()),
            published: RwLock::new(Arc::new(session)),
        })
    }

    fn current(&self) -> Arc<Session> {
        self.published.read().expect("published lock").clone()
    }
}

struct Inner {
    root: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Handle>>>,
    fault: Option<FaultHook>,
}

/// Shared service state. Sessions live under `root`, one directory each,
/// and are loaded lazily, so a fresh `AppState` on the same root picks up
/// where a previous process stopped.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self::build(root.into(), None)
    }

    pub fn with_fault_hook(root: impl Into<PathBuf>, hook: FaultHook) -> Self {
        Self::build(root.into(), Some(hook))
    }

    fn build(root: PathBuf, fault: Option<FaultHook>) -> Self {
        Self(Arc::new(Inner {
            root,
            sessions: Mutex::new(HashMap::new()),
            fault,
        }))
    }

    pub fn root(&self) -> &Path {
        &self.0.root
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, ServiceError> {
        let mut sessions = self.0.sessions.lock().expect("session map lock");
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        let dir = self.0.root.join(id);
        if !valid_id(id) || !dir.join(session::SNAPSHOT_FILE).is_file() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let handle = Handle::new(Session::load(&dir)?);
        sessions.insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    /// The last published session value.
    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        Ok(self.handle(id)?.current())
    }

    fn fault(&self, point: FaultPoint) -> Result<(), ServiceError> {
        match &self.0.fault {
            Some(hook) if hook(point) => Err(ServiceError::Fault(point)),
            _ => Ok(()),
        }
    }

    /// Creates, trains and persists a new session; returns its id.
    pub fn create_session(
        &self,
        cases_file: &Path,
        config: SessionConfig,
    ) -> Result<String, ServiceError> {
        let cases = read_case_file(cases_file)?;
        std::fs::create_dir_all(&self.0.root)?;
        let (id, dir) = (1u64..)
            .map(|n| format!("s{n:04}"))
            .find_map(|id| {
                let dir = self.0.root.join(&id);
                std::fs::create_dir(&dir).ok().map(|_| (id, dir))
            })
            .expect("unbounded id space");
        let built = Session::create(&id, cases, config).and_then(|s| {
            s.write_cases(&dir)?;
            s.persist(&dir)?;
            Ok(s)
        });
        match built {
            Ok(session) => {
                self.0
                    .sessions
                    .lock()
                    .expect("session map lock")
                    .insert(id.clone(), Handle::new(session));
                Ok(id)
            }
            Err(e) => {
                let _ = std::fs::remove_dir_all(&dir);
                Err(e)
            }
        }
    }

    /// Applies one label: retrain, persist, publish, acknowledge. An
    /// injected fault drops the in-memory session so the next request
    /// reloads it from disk, as a restarted process would.
    pub fn submit_label(
        &self,
        id: &str,
        case_id: &str,
        risk: Option<i64>,
    ) -> Result<Ack, ServiceError> {
        let handle = self.handle(id)?;
        let _writer = handle.writer.lock().expect("writer lock");
        let current = handle.current();
        let (next, ack) = match current.submit(case_id, risk)? {
            Submission::Replayed(ack) => return Ok(ack),
            Submission::Applied(next, ack) => (next, ack),
        };
        let crash = |e: ServiceError| {
            self.0.sessions.lock().expect("session map lock").remove(id);
            e
        };
        self.fault(FaultPoint::BeforePersist).map_err(crash)?;
        next.persist(&self.0.root.join(id)).map_err(crash)?;
        self.fault(FaultPoint::AfterPersist).map_err(crash)?;
        *handle.published.write().expect("published lock") = Arc::from(next);
        Ok(ack)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub cases_file_ref: PathBuf,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub status: StatusView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub case_id: String,
    /// 0 (low) or 1 (high). May be omitted in simulated sessions.
    #[serde(default)]
    pub risk: Option<i64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ImportanceParams {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub signed: bool,
    #[serde(default)]
    pub dedup: bool,
}

fn default_k() -> usize {
    5
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<Json<Created>, ServiceError> {
    blocking(move || {
        let session_id = app.create_session(&req.cases_file_ref, req.config)?;
        let status = app.session(&session_id)?.status_view();
        Ok(Json(Created { session_id, status }))
    })
    .await
}

async fn status(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StatusView>, ServiceError> {
    blocking(move || Ok(Json(app.session(&id)?.status_view()))).await
}

async fn query(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueryResponse>, ServiceError> {
    blocking(move || Ok(Json(app.session(&id)?.query_view()))).await
}

async fn labels(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<LabelSubmission>,
) -> Result<Json<Ack>, ServiceError> {
    blocking(move || Ok(Json(app.submit_label(&id, &body.case_id, body.risk)?))).await
}

async fn importance(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<ImportanceParams>,
) -> Result<Json<Vec<CaseReport>>, ServiceError> {
    blocking(move || {
        let options = ImportanceOptions {
            signed: params.signed,
            dedup: params.dedup,
        };
        Ok(Json(app.session(&id)?.importance(params.k, options)?))
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}/status", get(status))
        .route("/api/sessions/{id}/query", get(query))
        .route("/api/sessions/{id}/labels", post(labels))
        .route("/api/sessions/{id}/importance", get(importance))
        .with_state(state)
}

/// Serves the API on `listener` until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
