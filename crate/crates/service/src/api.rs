//! HTTP/JSON routes.
//!
//! Every route except `POST /zones` and the grant route authenticates a
//! zone member by bearer token. Errors are `{"error": "..."}` with status
//! 400, 401, 403, 404 or 409.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use caselink_core::link::NetworkFormat;
use caselink_core::{CaseCategory, FileNumber, LinkConfig, LinkLevel, Role};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::snapshot::{case_records, ChainContext, Snapshot};
use crate::store::{
    CaseAnnotation, CaseStore, ExchangeRequest, Principal, StoreError, StoredCase, Zone,
};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Backend(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    store: Arc<dyn CaseStore>,
    chain: Arc<ChainContext>,
    link_config: LinkConfig,
    snapshot: RwLock<Arc<Snapshot>>,
    /// Bumped on every write that can change the clustering.
    generation: AtomicU64,
    relink_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Builds the state and computes an initial clustering.
    pub fn new(
        store: Arc<dyn CaseStore>,
        chain: Arc<ChainContext>,
        link_config: LinkConfig,
    ) -> Result<Arc<Self>, StoreError> {
        let snapshot = compute(store.as_ref(), &chain, link_config, 0)?;
        Ok(Arc::new(Self {
            store,
            chain,
            link_config,
            snapshot: RwLock::new(Arc::new(snapshot)),
            generation: AtomicU64::new(0),
            relink_lock: tokio::sync::Mutex::new(()),
        }))
    }

    pub fn store(&self) -> &dyn CaseStore {
        self.store.as_ref()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    pub fn is_stale(&self) -> bool {
        self.snapshot().generation != self.generation.load(Ordering::SeqCst)
    }

    fn touch(&self) {
        self.generation.fetch_add(1, Ordering::SeqCst);
    }

    /// Recomputes the clustering off the async runtime and swaps it in.
    /// Readers keep the previous snapshot until the swap.
    pub async fn relink(self: &Arc<Self>) -> ApiResult<Arc<Snapshot>> {
        let _guard = self.relink_lock.lock().await;
        let generation = self.generation.load(Ordering::SeqCst);
        let state = Arc::clone(self);
        let snapshot = tokio::task::spawn_blocking(move || {
            compute(
                state.store.as_ref(),
                &state.chain,
                state.link_config,
                generation,
            )
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
        let snapshot = Arc::new(snapshot);
        *self.snapshot.write().unwrap_or_else(|p| p.into_inner()) = Arc::clone(&snapshot);
        Ok(snapshot)
    }

    fn principal(&self, headers: &HeaderMap) -> ApiResult<Principal> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        self.store
            .authenticate(token.trim())?
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid token"))
    }

    fn member(&self, headers: &HeaderMap) -> ApiResult<(String, String)> {
        match self.principal(headers)? {
            Principal::Member { zone_id, member } => Ok((zone_id, member)),
            Principal::Admin => Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "admin tokens cannot act for a zone",
            )),
        }
    }

    fn admin(&self, headers: &HeaderMap) -> ApiResult<()> {
        match self.principal(headers)? {
            Principal::Admin => Ok(()),
            Principal::Member { .. } => {
                Err(ApiError::new(StatusCode::FORBIDDEN, "admin token required"))
            }
        }
    }

    /// The case, if `zone` may read it; unreadable cases look absent.
    fn readable_case(&self, zone: &str, id: &FileNumber) -> ApiResult<StoredCase> {
        let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("case {id} not found"));
        let case = self.store.case(id)?.ok_or_else(not_found)?;
        if self.store.readable_zones(zone)?.contains(&case.zone_id) {
            Ok(case)
        } else {
            Err(not_found())
        }
    }
}

fn compute(
    store: &dyn CaseStore,
    chain: &ChainContext,
    config: LinkConfig,
    generation: u64,
) -> Result<Snapshot, StoreError> {
    let cases = case_records(&store.cases()?, &store.all_annotations()?);
    Ok(Snapshot::compute(chain, cases, config, generation))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn parse_case_id(raw: &str) -> ApiResult<FileNumber> {
    raw.parse()
        .map_err(|e| ApiError::bad_request(format!("malformed file number {raw:?}: {e}")))
}

fn parse_level(params: &HashMap<String, String>) -> ApiResult<LinkLevel> {
    let raw = params
        .get("level")
        .ok_or_else(|| ApiError::bad_request("missing level"))?;
    raw.parse()
        .map_err(|e: caselink_core::link::LinkError| ApiError::bad_request(e.to_string()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/zones", post(create_zone))
        .route("/zones/{id}/grants", post(grant_zone))
        .route("/cases", post(create_case).get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/annotations", post(annotate))
        .route("/relink", post(relink))
        .route("/clusters", get(clusters))
        .route("/network", get(network))
        .route(
            "/addresses/{addr}/requests",
            get(list_requests).post(log_request),
        )
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct NewZone {
    zone_id: String,
    name: String,
    #[serde(default)]
    readable_by: Vec<String>,
}

async fn create_zone(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<NewZone>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Zone>)> {
    s.admin(&headers)?;
    let Json(body) = body?;
    if body.zone_id.trim().is_empty() {
        return Err(ApiError::bad_request("zone_id must not be empty"));
    }
    let zone = Zone {
        zone_id: body.zone_id,
        name: body.name,
        readable_by: body.readable_by.into_iter().collect(),
    };
    s.store.create_zone(&zone).map_err(|e| match e {
        StoreError::NotFound(m) => ApiError::bad_request(m),
        other => other.into(),
    })?;
    Ok((StatusCode::CREATED, Json(zone)))
}

#[derive(Debug, Deserialize)]
struct NewGrant {
    reader_zone: String,
}

async fn grant_zone(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<NewGrant>, JsonRejection>,
) -> ApiResult<Json<Zone>> {
    s.admin(&headers)?;
    let Json(body) = body?;
    if s.store.zone(&body.reader_zone)?.is_none() {
        return Err(ApiError::bad_request(format!(
            "unknown zone {}",
            body.reader_zone
        )));
    }
    if s.store.zone(&id)?.is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("zone {id} not found"),
        ));
    }
    s.store.grant(&id, &body.reader_zone)?;
    Ok(Json(s.store.zone(&id)?.expect("zone exists")))
}

#[derive(Debug, Deserialize)]
struct NewCase {
    case_id: String,
    category: String,
}

#[derive(Debug, Serialize)]
struct CaseBody {
    #[serde(flatten)]
    case: StoredCase,
    annotations: Vec<CaseAnnotation>,
}

async fn create_case(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<NewCase>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CaseBody>)> {
    let (zone, _) = s.member(&headers)?;
    let Json(body) = body?;
    let case = StoredCase {
        case_id: parse_case_id(&body.case_id)?,
        zone_id: zone,
        category: body
            .category
            .parse::<CaseCategory>()
            .map_err(ApiError::bad_request)?,
        created_at: now(),
    };
    s.store.create_case(&case)?;
    s.touch();
    Ok((
        StatusCode::CREATED,
        Json(CaseBody {
            case,
            annotations: Vec::new(),
        }),
    ))
}

async fn list_cases(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<StoredCase>>> {
    let (zone, _) = s.member(&headers)?;
    let readable = s.store.readable_zones(&zone)?;
    let cases = s
        .store
        .cases()?
        .into_iter()
        .filter(|c| readable.contains(&c.zone_id))
        .collect();
    Ok(Json(cases))
}

async fn get_case(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<CaseBody>> {
    let (zone, _) = s.member(&headers)?;
    let case = s.readable_case(&zone, &parse_case_id(&id)?)?;
    let annotations = s.store.annotations(&case.case_id)?;
    Ok(Json(CaseBody { case, annotations }))
}

#[derive(Debug, Deserialize)]
struct NewAnnotation {
    address: String,
    role: String,
}

async fn annotate(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<NewAnnotation>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CaseAnnotation>)> {
    let (zone, member) = s.member(&headers)?;
    let Json(body) = body?;
    let role: Role = body.role.parse().map_err(ApiError::bad_request)?;
    let address = body.address.trim();
    if address.is_empty() {
        return Err(ApiError::bad_request("address must not be empty"));
    }
    let case = s.readable_case(&zone, &parse_case_id(&id)?)?;
    if case.zone_id != zone {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "only the owning zone may annotate a case",
        ));
    }
    let annotation = CaseAnnotation {
        case_id: case.case_id,
        address: address.to_string(),
        role,
        author: member,
        created_at: now(),
    };
    s.store.annotate(&annotation)?;
    s.touch();
    Ok((StatusCode::CREATED, Json(annotation)))
}

async fn relink(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Json<serde_json::Value>> {
    s.principal(&headers)?;
    let snapshot = s.relink().await?;
    Ok(Json(json!({
        "generation": snapshot.generation,
        "cases": snapshot.cases.len(),
        "stale": s.is_stale(),
    })))
}

async fn clusters(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (zone, _) = s.member(&headers)?;
    let level = parse_level(&params)?;
    let readable = s.store.readable_zones(&zone)?;
    let view = s.snapshot().view(&s.chain, level, &readable, s.is_stale());
    Ok(Json(view).into_response())
}

async fn network(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (zone, _) = s.member(&headers)?;
    let level = parse_level(&params)?;
    let format: NetworkFormat = params
        .get("format")
        .map(String::as_str)
        .unwrap_or("json")
        .parse()
        .map_err(|e: caselink_core::link::LinkError| ApiError::bad_request(e.to_string()))?;
    let readable = s.store.readable_zones(&zone)?;
    let net = s.snapshot().network(&s.chain, level, &readable);
    let content_type = match format {
        NetworkFormat::Json => "application/json",
        NetworkFormat::Dot => "text/vnd.graphviz",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], net.export(format)).into_response())
}

#[derive(Debug, Serialize)]
struct RequestEntry {
    #[serde(flatten)]
    request: ExchangeRequest,
    /// Another request for the same address was logged earlier, by any zone.
    duplicate: bool,
}

#[derive(Debug, Serialize)]
struct RequestLog {
    address: String,
    entries: Vec<RequestEntry>,
    any_other_zone_requested: bool,
}

async fn list_requests(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(address): Path<String>,
) -> ApiResult<Json<RequestLog>> {
    let (zone, _) = s.member(&headers)?;
    let readable = s.store.readable_zones(&zone)?;
    let all = s.store.requests(&address)?;
    let any_other_zone_requested = all.iter().any(|r| r.zone_id != zone);
    let entries = all
        .into_iter()
        .enumerate()
        .filter(|(_, r)| readable.contains(&r.zone_id))
        .map(|(i, request)| RequestEntry {
            request,
            duplicate: i > 0,
        })
        .collect();
    Ok(Json(RequestLog {
        address,
        entries,
        any_other_zone_requested,
    }))
}

#[derive(Debug, Deserialize)]
struct NewRequest {
    exchange: String,
}

async fn log_request(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(address): Path<String>,
    body: Result<Json<NewRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<RequestEntry>)> {
    let (zone, _) = s.member(&headers)?;
    let Json(body) = body?;
    if body.exchange.trim().is_empty() {
        return Err(ApiError::bad_request("exchange must not be empty"));
    }
    let earlier = !s.store.requests(&address)?.is_empty();
    let request = s
        .store
        .log_request(&address, body.exchange.trim(), &zone, &now())?;
    Ok((
        StatusCode::CREATED,
        Json(RequestEntry {
            request,
            duplicate: earlier,
        }),
    ))
}
