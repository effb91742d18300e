//! Routes and handlers. Bodies are read as bytes and parsed here so every
//! error, including malformed JSON, has the same JSON shape.

use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use radsafe_core::dose::DoseInput;
use radsafe_core::ledger::{
    create_record_with_id, InvestigationInputs, LedgerError, PatientId, ProposedExam, RecordId, SignedEnvelope,
};
use radsafe_core::pki::{Certificate, RevocationList, TrustBundle};
use radsafe_core::sync::{BatchEntry, SyncBatch, SyncFault};
use serde::{Deserialize, Serialize};

use crate::auth::{authenticate, Caller};
use crate::config::NodeRole;
use crate::node::{Ingest, IngestError, Node, NodeCounts};
use crate::upstream::{self, UpstreamStatus};
use crate::{AppState, API_DESCRIPTION};

const MAX_BODY: usize = 64 * 1024 * 1024;
pub const HDR_READ_SOURCES: &str = "x-radsafe-read-sources";
pub const HDR_NEXT_CURSOR: &str = "x-radsafe-next-cursor";
pub const OCTET_STREAM: &str = "application/octet-stream";
const DEFAULT_HISTORY_LIMIT: usize = 100;
const DEFAULT_PULL_LIMIT: usize = 1000;
const MAX_PAGE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: code.to_string(), message: message.into() } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "FORBIDDEN", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let msg = e.to_string();
        match e {
            LedgerError::Dose(_) => Self::new(StatusCode::BAD_REQUEST, "INVALID_DOSE_INPUT", msg),
            LedgerError::InvalidRange(_) => Self::new(StatusCode::BAD_REQUEST, "BAD_RANGE", msg),
            LedgerError::Unauthorized(r) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, r.code(), msg),
            LedgerError::Integrity { .. } | LedgerError::CorruptLog { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTEGRITY_FAILURE", msg)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "STORAGE_ERROR", msg),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let msg = e.to_string();
        match e {
            IngestError::Rejected { reason, .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, reason.code(), msg),
            IngestError::Conflict(_) => Self::new(StatusCode::CONFLICT, "RECORD_ID_CONFLICT", msg),
            IngestError::Storage(e) => e.into(),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn require(ok: bool, what: &str) -> ApiResult<()> {
    if ok {
        Ok(())
    } else {
        Err(ApiError::forbidden(format!("requires a {what} credential")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/patients/{id}/profile", get(profile))
        .route("/patients/{id}/history", get(history))
        .route("/investigations", post(investigations))
        .route("/whatif", post(whatif_handler))
        .route("/sync", post(sync_push))
        .route("/sync/pull", get(sync_pull))
        .route("/sync/upstream", post(sync_upstream))
        .route("/reports/periodic", get(report))
        .route_layer(middleware::from_fn_with_state(state.clone(), authn));
    Router::new()
        .route("/status", get(status))
        .route("/api", get(api_description))
        .route("/pki/bundle", get(pki_bundle))
        .route("/pki/certificates", post(pki_certificate))
        .route("/pki/crls", post(pki_crl))
        .merge(protected)
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = std::time::Instant::now();
    let resp = next.run(req).await;
    let caller = resp.extensions().get::<Caller>().map(|c| c.name.clone()).unwrap_or_default();
    tracing::info!(
        method = %method,
        path = %path,
        status = resp.status().as_u16(),
        caller = %caller,
        elapsed_ms = started.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

async fn authn(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let (parts, body) = req.into_parts();
    let bytes = match axum::body::to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(e.to_string()).into_response(),
    };
    let pq = parts.uri.path_and_query().map_or("/", |p| p.as_str());
    let skew = Duration::seconds(st.config.max_clock_skew_secs as i64);
    let verdict = {
        let node = st.node.read().expect("node lock");
        authenticate(&parts.headers, parts.method.as_str(), pq, &bytes, node.trust(), Utc::now(), skew)
    };
    match verdict {
        Err(e) => ApiError::new(StatusCode::FORBIDDEN, "UNAUTHENTICATED", e.to_string()).into_response(),
        Ok(caller) => {
            let mut req = Request::from_parts(parts, Body::from(bytes));
            req.extensions_mut().insert(caller.clone());
            let mut resp = next.run(req).await;
            resp.extensions_mut().insert(caller);
            resp
        }
    }
}

fn read_sources(sources: &[&str]) -> [(&'static str, String); 1] {
    [(HDR_READ_SOURCES, sources.join(","))]
}

#[derive(Debug, Deserialize)]
struct ProfileQuery {
    as_of: Option<String>,
}

async fn profile(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    Query(q): Query<ProfileQuery>,
) -> ApiResult<Response> {
    require(caller.is_clinical(), "PROFESSIONAL or FACILITY")?;
    let as_of = q.as_of.as_deref().map(|s| parse_time(s, false)).transpose()?.unwrap_or_else(Utc::now);
    let patient = PatientId::new(id);
    let sources = upstream::stage_patient(&st, &patient).await;
    let node = st.node.read().expect("node lock");
    match node.profile(&patient, as_of)? {
        Some(p) => Ok((read_sources(&sources), Json(p)).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_PATIENT", format!("no records for {patient}"))),
    }
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn history(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Response> {
    require(caller.is_clinical(), "PROFESSIONAL or FACILITY")?;
    let patient = PatientId::new(id);
    let sources = upstream::stage_patient(&st, &patient).await;
    let node = st.node.read().expect("node lock");
    if !node.knows_patient(&patient) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_PATIENT", format!("no records for {patient}")));
    }
    let limit = q.limit.unwrap_or(DEFAULT_HISTORY_LIMIT).clamp(1, MAX_PAGE);
    let page = node.history(&patient, q.cursor.as_deref(), limit)?;
    Ok((read_sources(&sources), Json(page)).into_response())
}

/// Either a signed envelope, or raw inputs for the service to sign with
/// its FACILITY key under a client-chosen record id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InvestigationRequest {
    Envelope {
        envelope: SignedEnvelope,
        #[serde(default)]
        certificates: Vec<Certificate>,
    },
    Raw {
        record_id: RecordId,
        inputs: InvestigationInputs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IngestStatus {
    Created,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestigationResponse {
    pub status: IngestStatus,
    pub record_id: RecordId,
    pub patient_id: PatientId,
    pub effective_dose_msv: f64,
    pub envelope: SignedEnvelope,
}

async fn investigations(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    require(caller.is_clinical(), "PROFESSIONAL or FACILITY")?;
    let req: InvestigationRequest = parse(&body)?;
    let now = Utc::now();
    // a patient first met at record time still gets their upstream history;
    // the pull cursor has moved past it
    let patient = match &req {
        InvestigationRequest::Envelope { envelope, .. } => envelope.decode_record().ok().map(|r| r.patient_id),
        InvestigationRequest::Raw { inputs, .. } => Some(inputs.patient_id.clone()),
    };
    if let Some(p) = patient {
        upstream::stage_patient(&st, &p).await;
    }
    let mut node = st.node.write().expect("node lock");
    let envelope = match req {
        InvestigationRequest::Envelope { envelope, certificates } => {
            add_certificates(&mut node, certificates);
            envelope
        }
        InvestigationRequest::Raw { record_id, inputs } => {
            if !caller.is_facility() && inputs.operator_id != caller.name {
                return Err(ApiError::forbidden("operator_id must name the authenticated operator"));
            }
            if let DoseInput::Catalog { exam } = &inputs.raw_input {
                if exam.is_empty() {
                    return Err(ApiError::bad_request("catalog exam must not be empty"));
                }
            }
            let mut signer = st.identity.signer().map_err(|e| LedgerError::Signing(e))?;
            create_record_with_id(record_id, inputs, node.engine(), &mut signer, node.trust())?
        }
    };
    let outcome = node.ingest(&envelope, &caller.name, false, now)?;
    drop(node);
    let (status, code, record) = match outcome {
        Ingest::Inserted(r) => (StatusCode::CREATED, IngestStatus::Created, *r),
        Ingest::Duplicate(_) => (StatusCode::OK, IngestStatus::Duplicate, envelope.decode_record()?),
    };
    if status == StatusCode::CREATED && st.config.role == NodeRole::Local {
        st.sync_wakeup.notify_one();
    }
    let resp = InvestigationResponse {
        status: code,
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        effective_dose_msv: record.effective_msv(),
        envelope,
    };
    Ok((status, Json(resp)).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub patient_id: PatientId,
    #[serde(default)]
    pub as_of: Option<DateTime<Utc>>,
    pub exam_type: String,
    /// Machine inputs; without them the catalog dose of `exam_type` is used.
    #[serde(default)]
    pub input: Option<DoseInput>,
}

async fn whatif_handler(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    require(caller.is_clinical(), "PROFESSIONAL or FACILITY")?;
    let req: WhatIfRequest = parse(&body)?;
    let sources = upstream::stage_patient(&st, &req.patient_id).await;
    let node = st.node.read().expect("node lock");
    let proposed = ProposedExam { exam_type: req.exam_type, input: req.input };
    let projection = node.whatif(&req.patient_id, req.as_of.unwrap_or_else(Utc::now), &proposed)?;
    Ok((read_sources(&sources), Json(projection)).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRequest {
    pub sender: String,
    pub entries: Vec<BatchEntry>,
    #[serde(default)]
    pub certificates: Vec<Certificate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncResponse {
    pub receiver: String,
    pub received: usize,
    pub inserted: usize,
    pub duplicates: usize,
    pub faults: Vec<SyncFault>,
    pub size: usize,
}

/// Adds certificates in dependency order; ones that never chain are
/// dropped and their envelopes fail as UNKNOWN_SIGNER.
pub(crate) fn add_certificates(node: &mut Node, mut certs: Vec<Certificate>) {
    loop {
        let before = certs.len();
        certs.retain(|c| node.add_certificate(c.clone()).is_err());
        if certs.len() == before {
            break;
        }
    }
}

/// Ingests every entry; a fault on one does not stop the others.
pub(crate) fn apply_batch(node: &mut Node, sender: &str, entries: &[BatchEntry], now: DateTime<Utc>) -> SyncResponse {
    let mut out = SyncResponse { receiver: node.id().to_string(), received: entries.len(), ..Default::default() };
    for e in entries {
        match node.ingest(&e.envelope, sender, e.durable, now) {
            Ok(Ingest::Inserted(_)) => out.inserted += 1,
            Ok(Ingest::Duplicate(_)) => out.duplicates += 1,
            Err(err) => out.faults.push(SyncFault {
                store: node.id().to_string(),
                record_id: match &err {
                    IngestError::Rejected { record_id, .. } => record_id.clone(),
                    IngestError::Conflict(id) => Some(id.clone()),
                    IngestError::Storage(_) => e.envelope.decode_record().ok().map(|r| r.record_id),
                },
                code: err.code().to_string(),
            }),
        }
    }
    out.size = node.store().len();
    out
}

fn is_octet_stream(headers: &HeaderMap, name: header::HeaderName) -> bool {
    headers.get(name).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains(OCTET_STREAM))
}

async fn sync_push(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    require(caller.is_facility(), "FACILITY")?;
    let req = if is_octet_stream(&headers, header::CONTENT_TYPE) {
        let batch = SyncBatch::decode(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if batch.receiver != st.config.node_id {
            return Err(ApiError::bad_request(format!("batch addressed to {}", batch.receiver)));
        }
        SyncRequest { sender: batch.sender, entries: batch.entries, certificates: Vec::new() }
    } else {
        parse(&body)?
    };
    let mut node = st.node.write().expect("node lock");
    add_certificates(&mut node, req.certificates);
    let out = apply_batch(&mut node, &format!("{} ({})", req.sender, caller.name), &req.entries, Utc::now());
    let status = if out.faults.is_empty() { StatusCode::OK } else { StatusCode::UNPROCESSABLE_ENTITY };
    Ok((status, Json(out)).into_response())
}

#[derive(Debug, Deserialize)]
struct PullQuery {
    since_cursor: Option<u64>,
    patient: Option<String>,
    limit: Option<usize>,
}

async fn sync_pull(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    headers: HeaderMap,
    Query(q): Query<PullQuery>,
) -> ApiResult<Response> {
    require(caller.is_facility(), "FACILITY")?;
    let patient = q.patient.map(PatientId::new);
    let limit = q.limit.unwrap_or(DEFAULT_PULL_LIMIT).clamp(1, MAX_PAGE);
    let page = st.node.read().expect("node lock").pull(q.since_cursor.unwrap_or(0), patient.as_ref(), limit);
    if is_octet_stream(&headers, header::ACCEPT) {
        let batch = SyncBatch { sender: page.sender, receiver: caller.name, entries: page.entries };
        let bytes = batch.encode().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "ENCODE", e.to_string()))?;
        let headers = [
            (header::CONTENT_TYPE, HeaderValue::from_static(OCTET_STREAM)),
            (header::HeaderName::from_static(HDR_NEXT_CURSOR), HeaderValue::from(page.next_cursor)),
        ];
        return Ok((headers, bytes).into_response());
    }
    Ok(Json(page).into_response())
}

async fn sync_upstream(State(st): State<Arc<AppState>>, Extension(caller): Extension<Caller>) -> ApiResult<Response> {
    require(caller.is_facility(), "FACILITY")?;
    if st.config.role != NodeRole::Local {
        return Err(ApiError::new(StatusCode::CONFLICT, "NO_UPSTREAM", "only LOCAL nodes have an upstream"));
    }
    match upstream::sync_once(&st).await {
        Ok(report) => Ok(Json(report).into_response()),
        Err(e) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "UPSTREAM_UNREACHABLE", e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    from: String,
    to: String,
    format: Option<String>,
}

/// RFC 3339 instant or a calendar date; a date as upper bound means the
/// end of that day.
fn parse_time(s: &str, end_of_day: bool) -> ApiResult<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "BAD_RANGE", format!("bad time {s:?}")))?;
    let start = d.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    Ok(if end_of_day { start + Duration::days(1) - Duration::nanoseconds(1) } else { start })
}

async fn report(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    headers: HeaderMap,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    require(caller.is_facility(), "FACILITY")?;
    let from = parse_time(&q.from, false)?;
    let to = parse_time(&q.to, true)?;
    let report = st.node.read().expect("node lock").report(from, to)?;
    let wants_csv = q.format.as_deref() == Some("csv")
        || headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("text/csv"));
    if wants_csv {
        let name = format!("attachment; filename=\"report_{}_{}.csv\"", from.format("%Y%m%d"), to.format("%Y%m%d"));
        let headers = [
            (header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8")),
            (header::CONTENT_DISPOSITION, HeaderValue::from_str(&name).expect("ascii header")),
        ];
        return Ok((headers, report.to_csv()).into_response());
    }
    Ok(Json(report).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Online,
    /// LOCAL node whose upstream is unreachable: reads come from the local
    /// store only and new records wait for the next sync.
    LocalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub node_id: String,
    pub role: NodeRole,
    pub mode: Mode,
    pub engine_version: String,
    pub started_at: DateTime<Utc>,
    pub counts: NodeCounts,
    #[serde(default)]
    pub upstream: Option<UpstreamStatus>,
}

async fn status(State(st): State<Arc<AppState>>) -> Json<StatusResponse> {
    let (counts, engine_version) = {
        let node = st.node.read().expect("node lock");
        (node.counts(), node.engine().version().to_string())
    };
    let upstream = (st.config.role == NodeRole::Local).then(|| st.upstream_status.lock().expect("status lock").clone());
    let mode = match &upstream {
        Some(u) if !u.reachable => Mode::LocalOnly,
        _ => Mode::Online,
    };
    Json(StatusResponse {
        node_id: st.config.node_id.clone(),
        role: st.config.role,
        mode,
        engine_version,
        started_at: st.started_at,
        counts,
        upstream,
    })
}

async fn api_description() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], API_DESCRIPTION).into_response()
}

async fn pki_bundle(State(st): State<Arc<AppState>>) -> Json<TrustBundle> {
    Json(st.node.read().expect("node lock").trust().to_bundle())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkiResponse {
    pub installed: bool,
}

async fn pki_certificate(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let cert: Certificate = parse(&body)?;
    let added = st.node.write().expect("node lock").add_certificate(cert);
    match added {
        Ok(installed) => {
            let status = if installed { StatusCode::CREATED } else { StatusCode::OK };
            Ok((status, Json(PkiResponse { installed })).into_response())
        }
        Err(r) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, r.code(), "certificate does not chain to a trust anchor")),
    }
}

async fn pki_crl(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let crl: RevocationList = parse(&body)?;
    let added = st.node.write().expect("node lock").add_crl(crl);
    match added {
        Ok(installed) => Ok(Json(PkiResponse { installed }).into_response()),
        Err(e) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CRL", e.to_string())),
    }
}
