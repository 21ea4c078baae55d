//! HTTP service that runs a live study over an append-only JSONL log.
//!
//! Every state change (a registration or an accepted response) is one log
//! line, written under the state lock before the request is acknowledged.
//! Reopening the log replays it, so a restarted server resumes exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelSpace};
use crate::error::{Error, Result};
use crate::method::level_percent;
use crate::rationale::{render_masked, Rationale};
use crate::rng::{self, Stream};
use crate::study::{analyze, rationale_index, AssignmentPlan, Gold, HitSpec, Response, StudyReport};
use crate::study::{GROUP_SIZE, N_GROUPS};

/// Everything a study needs besides its log.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub plan: AssignmentPlan,
    pub documents: Vec<Document>,
    pub rationales: Vec<Rationale>,
    pub labels: LabelSpace,
    /// Seeds the ellipsis runs of masked texts.
    pub render_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Qualify {
        worker_id: String,
        group_id: usize,
        timestamp: u64,
    },
    Response(Response),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitItemPayload {
    pub review_id: String,
    pub masked_text: String,
}

/// What a participant sees. Deliberately carries no level, method or
/// original length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitPayload {
    pub hit_id: String,
    pub items: Vec<HitItemPayload>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QualifyRequest {
    pub worker_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualifyReply {
    pub group_id: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct WorkerQuery {
    pub worker_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseRequest {
    pub worker_id: String,
    pub review_id: String,
    pub label: String,
    pub confidence: u8,
}

struct Inner {
    plan: AssignmentPlan,
    labels: LabelSpace,
    gold: Gold,
    /// hit id -> review id -> masked text.
    payloads: HashMap<String, BTreeMap<String, String>>,
    groups: HashMap<String, usize>,
    group_sizes: Vec<usize>,
    done: HashSet<(String, String)>,
    responses: Vec<Response>,
    log: File,
}

/// Shared handle to a running study.
#[derive(Clone)]
pub struct AppState(Arc<Mutex<Inner>>);

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl AppState {
    /// Validates the study data, renders every HIT once and replays `log`
    /// if it exists.
    pub fn open(data: StudyData, log: impl AsRef<Path>) -> Result<Self> {
        let log = log.as_ref();
        data.plan.check()?;
        let by_id: HashMap<&str, &Document> = data.documents.iter().map(|d| (d.id.as_str(), d)).collect();
        let index = rationale_index(&data.rationales);
        let mut payloads = HashMap::new();
        for h in &data.plan.hits {
            let mut items = BTreeMap::new();
            for item in &h.items {
                let doc = by_id
                    .get(item.review_id.as_str())
                    .ok_or_else(|| Error::UnknownReview(item.review_id.clone()))?;
                let r = index
                    .get(&(item.review_id.clone(), h.method, level_percent(item.length_level)))
                    .ok_or_else(|| Error::MissingRationale {
                        review_id: item.review_id.clone(),
                        method: h.method.to_string(),
                        level: item.length_level,
                    })?;
                let key = format!("{}/{}", h.hit_id, item.review_id);
                let mut rng = rng::substream(data.render_seed, Stream::Render, rng::hash_str(&key));
                items.insert(item.review_id.clone(), render_masked(doc, r, &mut rng)?);
            }
            payloads.insert(h.hit_id.clone(), items);
        }
        let gold = Gold::from_documents(data.labels.clone(), &data.documents);

        let entries = replay(log)?;
        let file = OpenOptions::new().create(true).append(true).open(log)?;
        let mut inner = Inner {
            plan: data.plan,
            labels: data.labels,
            gold,
            payloads,
            groups: HashMap::new(),
            group_sizes: vec![0; N_GROUPS],
            done: HashSet::new(),
            responses: Vec::new(),
            log: file,
        };
        for (i, e) in entries.into_iter().enumerate() {
            inner.apply(e).map_err(|msg| Error::MalformedRecord { line: i + 1, msg })?;
        }
        Ok(Self(Arc::new(Mutex::new(inner))))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        // A panic mid-request leaves the in-memory state consistent with the
        // log, since the log line is written before state is touched.
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn responses(&self) -> Vec<Response> {
        self.lock().responses.clone()
    }

    pub fn group_of(&self, worker_id: &str) -> Option<usize> {
        self.lock().groups.get(worker_id).copied()
    }
}

/// Reads a log, dropping a torn final line left by a crash mid-write.
fn replay(path: &Path) -> Result<Vec<LogEntry>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut lines = Vec::new();
    let mut reader = BufReader::new(file);
    let mut buf = String::new();
    let mut good_bytes = 0u64;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        if !buf.ends_with('\n') {
            log::warn!("dropping torn final log line");
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(good_bytes)?;
            break;
        }
        good_bytes += n as u64;
        if !buf.trim().is_empty() {
            lines.push(buf.clone());
        }
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

enum Reject {
    BadRequest(String),
    Forbidden(String),
    Conflict(String),
    Internal(Error),
}

impl IntoResponse for Reject {
    fn into_response(self) -> HttpResponse {
        let (status, kind, msg) = match self {
            Reject::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            Reject::Forbidden(m) => (StatusCode::FORBIDDEN, "forbidden", m),
            Reject::Conflict(m) => (StatusCode::CONFLICT, "conflict", m),
            Reject::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string()),
        };
        (status, Json(serde_json::json!({ "error": msg, "kind": kind }))).into_response()
    }
}

impl Inner {
    fn hit_for(&self, group: usize, review_id: &str) -> Option<&HitSpec> {
        self.plan
            .hits_for_group(group)
            .find(|h| h.items.iter().any(|i| i.review_id == review_id))
    }

    fn append(&mut self, entry: &LogEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        Ok(())
    }

    /// Applies a logged event. Shared by live requests and replay.
    fn apply(&mut self, entry: LogEntry) -> std::result::Result<(), String> {
        match entry {
            LogEntry::Qualify { worker_id, group_id, .. } => {
                if group_id >= N_GROUPS || self.groups.contains_key(&worker_id) {
                    return Err(format!("bad registration of {worker_id:?}"));
                }
                self.group_sizes[group_id] += 1;
                self.groups.insert(worker_id, group_id);
            }
            LogEntry::Response(r) => {
                if !self.done.insert((r.worker_id.clone(), r.review_id.clone())) {
                    return Err(format!("duplicate response ({:?}, {:?})", r.worker_id, r.review_id));
                }
                self.responses.push(r);
            }
        }
        Ok(())
    }

    fn qualify(&mut self, worker_id: String) -> std::result::Result<usize, Reject> {
        if worker_id.is_empty() {
            return Err(Reject::BadRequest("empty worker_id".into()));
        }
        if let Some(&g) = self.groups.get(&worker_id) {
            return Ok(g);
        }
        let total = self.groups.len();
        if total >= N_GROUPS * GROUP_SIZE {
            return Err(Reject::Conflict("study is full".into()));
        }
        let group_id = total % N_GROUPS;
        let entry = LogEntry::Qualify {
            worker_id,
            group_id,
            timestamp: now_ms(),
        };
        self.append(&entry).map_err(Reject::Internal)?;
        self.apply(entry).map_err(|m| Reject::Internal(Error::Config(m)))?;
        Ok(group_id)
    }

    fn next_hit(&self, worker_id: &str) -> std::result::Result<Option<HitPayload>, Reject> {
        let group = *self
            .groups
            .get(worker_id)
            .ok_or_else(|| Reject::Forbidden(format!("unknown worker {worker_id:?}")))?;
        for h in self.plan.hits_for_group(group) {
            let texts = &self.payloads[&h.hit_id];
            let items: Vec<HitItemPayload> = h
                .items
                .iter()
                .filter(|i| !self.done.contains(&(worker_id.to_string(), i.review_id.clone())))
                .map(|i| HitItemPayload {
                    review_id: i.review_id.clone(),
                    masked_text: texts[&i.review_id].clone(),
                })
                .collect();
            if !items.is_empty() {
                return Ok(Some(HitPayload {
                    hit_id: h.hit_id.clone(),
                    items,
                }));
            }
        }
        Ok(None)
    }

    fn respond(&mut self, req: ResponseRequest) -> std::result::Result<(), Reject> {
        if !(1..=5).contains(&req.confidence) {
            return Err(Reject::BadRequest(format!("confidence {} outside 1..=5", req.confidence)));
        }
        if self.labels.index_of(&req.label).is_none() {
            return Err(Reject::BadRequest(format!("unknown label {:?}", req.label)));
        }
        let group = *self
            .groups
            .get(&req.worker_id)
            .ok_or_else(|| Reject::Forbidden(format!("unknown worker {:?}", req.worker_id)))?;
        let hit = self.hit_for(group, &req.review_id).ok_or_else(|| {
            Reject::Forbidden(format!("review {:?} is not assigned to this worker", req.review_id))
        })?;
        if self.done.contains(&(req.worker_id.clone(), req.review_id.clone())) {
            return Err(Reject::Conflict("response already recorded".into()));
        }
        let item = hit
            .items
            .iter()
            .find(|i| i.review_id == req.review_id)
            .expect("hit_for matched this review");
        let entry = LogEntry::Response(Response {
            worker_id: req.worker_id,
            review_id: req.review_id,
            hit_id: hit.hit_id.clone(),
            method: hit.method,
            length_level: item.length_level,
            label: req.label,
            confidence: req.confidence,
            timestamp: now_ms(),
        });
        self.append(&entry).map_err(Reject::Internal)?;
        self.apply(entry).map_err(|m| Reject::Internal(Error::Config(m)))?;
        Ok(())
    }

    fn results(&self) -> Result<StudyReport> {
        analyze(&self.responses, &self.gold)
    }
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> std::result::Result<T, Reject> {
    payload.map(|Json(v)| v).map_err(|e| Reject::BadRequest(e.body_text()))
}

async fn qualify_handler(
    State(state): State<AppState>,
    payload: std::result::Result<Json<QualifyRequest>, JsonRejection>,
) -> std::result::Result<Json<QualifyReply>, Reject> {
    let req = body(payload)?;
    let group_id = state.lock().qualify(req.worker_id)?;
    Ok(Json(QualifyReply { group_id }))
}

async fn hit_handler(
    State(state): State<AppState>,
    query: std::result::Result<Query<WorkerQuery>, QueryRejection>,
) -> std::result::Result<HttpResponse, Reject> {
    let Query(q) = query.map_err(|e| Reject::BadRequest(e.body_text()))?;
    match state.lock().next_hit(&q.worker_id)? {
        Some(p) => Ok(Json(p).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn response_handler(
    State(state): State<AppState>,
    payload: std::result::Result<Json<ResponseRequest>, JsonRejection>,
) -> std::result::Result<Json<serde_json::Value>, Reject> {
    let req = body(payload)?;
    state.lock().respond(req)?;
    Ok(Json(serde_json::json!({ "status": "ok" })))
}

async fn results_handler(State(state): State<AppState>) -> std::result::Result<Json<StudyReport>, Reject> {
    state.lock().results().map(Json).map_err(Reject::Internal)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/qualify", post(qualify_handler))
        .route("/api/hit", get(hit_handler))
        .route("/api/response", post(response_handler))
        .route("/api/results", get(results_handler))
        .with_state(state)
}

/// Serves `data` on `port` until ctrl-c, logging to `log`.
pub async fn serve(data: StudyData, log: &Path, port: u16) -> Result<()> {
    let state = AppState::open(data, log)?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("serving study on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
