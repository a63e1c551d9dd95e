//! HTTP API for the reader study.
//!
//! All bodies are JSON. Dentist-scoped routes need the `X-Dentist-Token`
//! header returned by enrollment. Any POST may carry an `Idempotency-Key`;
//! a repeated key replays the first response without re-executing.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/v1/studies` | create a study |
//! | POST | `/v1/studies/{study}/enroll` | issue a dentist token |
//! | GET | `/v1/studies/{study}/next` | active or next item |
//! | POST | `/v1/studies/{study}/sessions/{session}/items/{seq}/start` | item on screen |
//! | POST | `/v1/studies/{study}/sessions/{session}/items/{seq}/model-wait/begin` | model wait starts |
//! | POST | `/v1/studies/{study}/sessions/{session}/items/{seq}/model-wait/end` | model wait ends |
//! | POST | `/v1/studies/{study}/sessions/{session}/items/{seq}/response` | answer |
//! | POST | `/v1/studies/{study}/sessions/{session}/items/{seq}/rating` | rating |
//! | GET | `/v1/studies/{study}/status` | progress |
//! | POST | `/v1/studies/{study}/export` | results, once every session is done |

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AnswerSubmission, Dentist, RatingRecord, Study, StudyDesign, StudyError, StudyItem, Submission};
use crate::client::Clock;
use crate::domain::TaskRegistry;

pub const TOKEN_HEADER: &str = "x-dentist-token";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateStudy {
    pub study_id: String,
    #[serde(default)]
    pub design: StudyDesign,
    pub items: Vec<StudyItem>,
    pub dentists: Vec<Dentist>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Enroll {
    pub dentist_id: String,
}

pub struct ServiceState {
    studies: Mutex<BTreeMap<String, Study>>,
    replies: Mutex<HashMap<String, (StatusCode, Value)>>,
    clock: Arc<dyn Clock>,
    registry: TaskRegistry,
    log_dir: Option<PathBuf>,
    export_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(clock: Arc<dyn Clock>, registry: TaskRegistry) -> Self {
        ServiceState {
            studies: Mutex::new(BTreeMap::new()),
            replies: Mutex::new(HashMap::new()),
            clock,
            registry,
            log_dir: None,
            export_dir: None,
        }
    }

    /// Keep one event log per study in `dir`; existing logs are replayed on start.
    pub fn with_log_dir(mut self, dir: PathBuf) -> Result<Self, StudyError> {
        std::fs::create_dir_all(&dir).map_err(|e| StudyError::Log(e.to_string()))?;
        let mut studies = BTreeMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|e| StudyError::Log(e.to_string()))?;
        for e in entries.flatten() {
            let p = e.path();
            if p.extension().is_some_and(|x| x == "jsonl") {
                let s = Study::open(&p, self.clock.clone())?;
                studies.insert(s.study_id.clone(), s);
            }
        }
        self.studies = Mutex::new(studies);
        self.log_dir = Some(dir);
        Ok(self)
    }

    /// Also write export files under `dir/{study}` when exporting.
    pub fn with_export_dir(mut self, dir: PathBuf) -> Self {
        self.export_dir = Some(dir);
        self
    }

    /// Add an already constructed study.
    pub fn insert(&self, study: Study) {
        self.studies.lock().unwrap().insert(study.study_id.clone(), study);
    }
}

type Reply = (StatusCode, Json<Value>);

fn error_reply(e: &StudyError) -> Reply {
    let status = match e {
        StudyError::Unauthorized => StatusCode::UNAUTHORIZED,
        StudyError::UnknownStudy(_) | StudyError::UnknownSession(_) | StudyError::UnknownDentist(_) => {
            StatusCode::NOT_FOUND
        }
        StudyError::NotActive { .. } | StudyError::OpenSessions(_) => StatusCode::CONFLICT,
        StudyError::Design(_) | StudyError::InvalidSubmission(_) => StatusCode::UNPROCESSABLE_ENTITY,
        StudyError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let mut body = json!({ "error": e.to_string() });
    if let StudyError::OpenSessions(list) = e {
        body["open_sessions"] = json!(list);
    }
    (status, Json(body))
}

fn reply<T: Serialize>(status: StatusCode, r: Result<T, StudyError>) -> Reply {
    match r {
        Ok(v) => (status, Json(serde_json::to_value(v).expect("reply serializes"))),
        Err(e) => error_reply(&e),
    }
}

/// Run `f` unless this idempotency key was already answered.
fn idempotent(state: &ServiceState, scope: &str, headers: &HeaderMap, f: impl FnOnce() -> Reply) -> Reply {
    let Some(key) = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) else { return f() };
    let key = format!("{scope}\u{0}{key}");
    if let Some((s, v)) = state.replies.lock().unwrap().get(&key) {
        return (*s, Json(v.clone()));
    }
    let (s, Json(v)) = f();
    if !s.is_server_error() {
        state.replies.lock().unwrap().insert(key, (s, v.clone()));
    }
    (s, Json(v))
}

fn with_study<T>(
    state: &ServiceState,
    id: &str,
    f: impl FnOnce(&mut Study) -> Result<T, StudyError>,
) -> Result<T, StudyError> {
    let mut studies = state.studies.lock().unwrap();
    let study = studies.get_mut(id).ok_or_else(|| StudyError::UnknownStudy(id.to_string()))?;
    f(study)
}

fn dentist(study: &Study, headers: &HeaderMap) -> Result<String, StudyError> {
    let token = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()).ok_or(StudyError::Unauthorized)?;
    study.authenticate(token)
}

async fn create(State(st): State<Arc<ServiceState>>, headers: HeaderMap, Json(req): Json<CreateStudy>) -> Reply {
    idempotent(&st, "create", &headers, || {
        let r = (|| {
            if st.studies.lock().unwrap().contains_key(&req.study_id) {
                return Err(StudyError::Design(format!("study {} already exists", req.study_id)));
            }
            let log = st.log_dir.as_ref().map(|d| d.join(format!("{}.jsonl", req.study_id)));
            let study = Study::create(
                &req.study_id,
                req.design,
                req.items,
                req.dentists,
                req.seed,
                st.clock.clone(),
                log.as_deref(),
            )?;
            let out = json!({ "study_id": study.study_id, "sessions": study.status().sessions.len() });
            st.insert(study);
            Ok(out)
        })();
        reply(StatusCode::CREATED, r)
    })
}

async fn enroll(
    State(st): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<Enroll>,
) -> Reply {
    idempotent(&st, &id, &headers, || {
        reply(
            StatusCode::OK,
            with_study(&st, &id, |s| s.enroll(&req.dentist_id).map(|token| json!({ "token": token }))),
        )
    })
}

async fn next(State(st): State<Arc<ServiceState>>, Path(id): Path<String>, headers: HeaderMap) -> Reply {
    reply(
        StatusCode::OK,
        with_study(&st, &id, |s| {
            let d = dentist(s, &headers)?;
            s.next_item(&d)
        }),
    )
}

#[derive(Clone, Copy)]
enum Mark {
    Start,
    WaitBegin,
    WaitEnd,
}

fn mark(st: &ServiceState, id: &str, session: &str, seq: usize, headers: &HeaderMap, m: Mark) -> Reply {
    idempotent(st, id, headers, || {
        reply(
            StatusCode::OK,
            with_study(st, id, |s| {
                let d = dentist(s, headers)?;
                match m {
                    Mark::Start => s.start(&d, session, seq),
                    Mark::WaitBegin => s.begin_model_wait(&d, session, seq),
                    Mark::WaitEnd => s.end_model_wait(&d, session, seq),
                }
                .map(|_| json!({ "ok": true }))
            }),
        )
    })
}

async fn start(
    State(st): State<Arc<ServiceState>>,
    Path((id, session, seq)): Path<(String, String, usize)>,
    headers: HeaderMap,
) -> Reply {
    mark(&st, &id, &session, seq, &headers, Mark::Start)
}

async fn wait_begin(
    State(st): State<Arc<ServiceState>>,
    Path((id, session, seq)): Path<(String, String, usize)>,
    headers: HeaderMap,
) -> Reply {
    mark(&st, &id, &session, seq, &headers, Mark::WaitBegin)
}

async fn wait_end(
    State(st): State<Arc<ServiceState>>,
    Path((id, session, seq)): Path<(String, String, usize)>,
    headers: HeaderMap,
) -> Reply {
    mark(&st, &id, &session, seq, &headers, Mark::WaitEnd)
}

fn submit(st: &ServiceState, id: &str, session: &str, seq: usize, headers: &HeaderMap, sub: Submission) -> Reply {
    idempotent(st, id, headers, || {
        reply(
            StatusCode::OK,
            with_study(st, id, |s| {
                let d = dentist(s, headers)?;
                s.submit(&d, session, seq, sub)
            }),
        )
    })
}

async fn response(
    State(st): State<Arc<ServiceState>>,
    Path((id, session, seq)): Path<(String, String, usize)>,
    headers: HeaderMap,
    Json(body): Json<AnswerSubmission>,
) -> Reply {
    submit(&st, &id, &session, seq, &headers, Submission::Answer(body))
}

async fn rating(
    State(st): State<Arc<ServiceState>>,
    Path((id, session, seq)): Path<(String, String, usize)>,
    headers: HeaderMap,
    Json(body): Json<RatingRecord>,
) -> Reply {
    submit(&st, &id, &session, seq, &headers, Submission::Rating(body))
}

async fn status(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> Reply {
    reply(StatusCode::OK, with_study(&st, &id, |s| Ok(s.status())))
}

async fn export(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> Reply {
    reply(
        StatusCode::OK,
        with_study(&st, &id, |s| {
            if let Some(dir) = &st.export_dir {
                s.export_to(&st.registry, &dir.join(&id))?;
            }
            s.export(&st.registry)
        }),
    )
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let item = "/v1/studies/{study}/sessions/{session}/items/{seq}";
    Router::new()
        .route("/v1/studies", post(create))
        .route("/v1/studies/{study}/enroll", post(enroll))
        .route("/v1/studies/{study}/next", get(next))
        .route(&format!("{item}/start"), post(start))
        .route(&format!("{item}/model-wait/begin"), post(wait_begin))
        .route(&format!("{item}/model-wait/end"), post(wait_end))
        .route(&format!("{item}/response"), post(response))
        .route(&format!("{item}/rating"), post(rating))
        .route("/v1/studies/{study}/status", get(status))
        .route("/v1/studies/{study}/export", post(export))
        .with_state(state)
}

/// Bind and serve until the process ends. Returns the bound address through `on_bind`.
pub async fn serve(
    state: Arc<ServiceState>,
    addr: SocketAddr,
    on_bind: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
