use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::header::{ACCEPT, AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use brewtask_core::accounts::{Principal, Session};
use brewtask_core::ingestion::FeedQuery;
use brewtask_core::kitchen::{DataSource, GoldAnswer};
use brewtask_core::model::{
    Category, Context, InstanceId, JobDraft, JobId, Payload, RewardId, Role, Timestamp, UnitId, Values,
};
use brewtask_core::routing::{ClaimedInstance, JobSummary};
use brewtask_core::Platform;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::template::{render, Templates};

pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 1000;
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub templates: Arc<Templates>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/session", post(login).delete(logout))
        .route("/me", get(me))
        .route("/kitchen/jobs", post(create_job).get(list_jobs))
        .route("/kitchen/jobs/{id}", get(get_job))
        .route("/kitchen/jobs/{id}/data", post(attach_data))
        .route("/kitchen/jobs/{id}/gold", post(set_gold))
        .route("/kitchen/jobs/{id}/publish", post(publish))
        .route("/kitchen/jobs/{id}/close", post(close))
        .route("/kitchen/jobs/{id}/results", get(results))
        .route("/kitchen/jobs/{id}/reports/kappa", get(kappa_report))
        .route("/kitchen/jobs/{id}/reports/stats", get(stats_report))
        .route("/cafe/categories", get(categories))
        .route("/cafe/jobs", get(available_jobs))
        .route("/cafe/jobs/{id}/claim", post(claim))
        .route("/cafe/instances/{id}", get(instance_view))
        .route("/cafe/instances/{id}/submit", post(submit))
        .route("/cafe/rewards", get(rewards))
        .route("/cafe/rewards/{id}/purchase", post(purchase))
        .route("/cafe/coupons", get(coupons))
        .route("/cafe/transactions", get(transactions))
        .route("/admin/expire", post(expire))
        .with_state(state)
}

/// Runs a blocking platform call off the async workers.
async fn blocking<R, F>(f: F) -> ApiResult<R>
where
    R: Send + 'static,
    F: FnOnce() -> brewtask_core::Result<R> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

/// JSON body extractor whose rejections use the API error format.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    S: Send + Sync,
    Json<T>: FromRequest<S, Rejection = axum::extract::rejection::JsonRejection>,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))
    }
}

/// The caller, from an `Authorization: Bearer <token>` header.
pub struct Auth(pub Principal);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(|t| t.trim().to_owned())
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing bearer token"))?;
        let platform = state.platform.clone();
        blocking(move || platform.authenticate(&token)).await.map(Auth)
    }
}

impl Auth {
    fn require(&self, roles: &[Role]) -> ApiResult<()> {
        if roles.contains(&self.0.role) {
            Ok(())
        } else {
            Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "role not allowed"))
        }
    }
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_owned)
}

#[derive(Debug, Default, Deserialize)]
pub struct PageQuery {
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub limit: usize,
    pub offset: usize,
}

impl<T> Page<T> {
    fn of(all: Vec<T>, q: &PageQuery) -> Self {
        let limit = q.limit.unwrap_or(DEFAULT_PAGE_LIMIT).min(MAX_PAGE_LIMIT);
        let offset = q.offset.unwrap_or(0);
        let total = all.len();
        Self {
            items: all.into_iter().skip(offset).take(limit).collect(),
            total,
            limit,
            offset,
        }
    }
}

#[derive(Debug, Deserialize)]
struct LoginRequest {
    user_id: String,
    api_key: String,
}

async fn login(State(s): State<AppState>, ApiJson(req): ApiJson<LoginRequest>) -> ApiResult<(StatusCode, Json<Session>)> {
    let p = s.platform.clone();
    let session = blocking(move || p.login(&req.user_id, &req.api_key)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn logout(State(s): State<AppState>, headers: HeaderMap, _auth: Auth) -> ApiResult<StatusCode> {
    let token = headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default()
        .trim()
        .to_owned();
    let p = s.platform.clone();
    blocking(move || p.logout(&token)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn me(State(s): State<AppState>, Auth(who): Auth) -> ApiResult<Response> {
    let p = s.platform.clone();
    let summary = blocking(move || p.worker_summary(&who.user_id)).await?;
    Ok(Json(summary).into_response())
}

// Kitchen

const KITCHEN: &[Role] = &[Role::Requestor, Role::Admin];

async fn create_job(
    State(s): State<AppState>,
    auth: Auth,
    ApiJson(draft): ApiJson<JobDraft>,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let job = blocking(move || p.create_job(&auth.0.user_id, &draft)).await?;
    Ok((StatusCode::CREATED, Json(job)).into_response())
}

async fn list_jobs(State(s): State<AppState>, auth: Auth, Query(q): Query<PageQuery>) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let jobs = blocking(move || p.jobs_for(&auth.0.user_id)).await?;
    Ok(Json(Page::of(jobs, &q)).into_response())
}

async fn get_job(State(s): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let job = blocking(move || p.owned_job(&auth.0.user_id, &JobId(id))).await?;
    Ok(Json(job).into_response())
}

/// JSON body for non-file data sources.
#[derive(Debug, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
enum DataRequest {
    Feed {
        #[serde(default = "default_feed_source")]
        adapter: String,
        hashtag: String,
        limit: u32,
    },
    Survey,
    Csv {
        content: String,
    },
}

fn default_feed_source() -> String {
    "fixture".into()
}

/// Accepts a multipart upload (file field `file`), a raw `text/csv` body or
/// a JSON feed/survey description.
async fn attach_data(
    State(s): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    req: Request,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let content_type = req
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let source = if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &s)
            .await
            .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
        let mut bytes = None;
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?
        {
            if field.name() == Some("file") {
                let data = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
                bytes = Some(data.to_vec());
            }
        }
        DataSource::Csv {
            bytes: bytes.ok_or_else(|| ApiError::bad_request("invalid_body", "multipart field \"file\" missing"))?,
        }
    } else if content_type.starts_with("text/csv") {
        let bytes = axum::body::Bytes::from_request(req, &s)
            .await
            .map_err(|e| ApiError::new(e.status(), "invalid_body", e.body_text()))?;
        DataSource::Csv { bytes: bytes.to_vec() }
    } else {
        let ApiJson(body) = ApiJson::<DataRequest>::from_request(req, &s).await?;
        match body {
            DataRequest::Survey => DataSource::Survey,
            DataRequest::Csv { content } => DataSource::Csv {
                bytes: content.into_bytes(),
            },
            DataRequest::Feed { adapter, hashtag, limit } => {
                DataSource::Feed(FeedQuery::new(adapter, &hashtag, limit).map_err(brewtask_core::Error::from)?)
            }
        }
    };
    let p = s.platform.clone();
    let summary = blocking(move || p.attach_data(&auth.0.user_id, &JobId(id), &source)).await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GoldRequest {
    Wrapped { answers: Vec<GoldAnswer> },
    Bare(Vec<GoldAnswer>),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CountResponse {
    pub count: usize,
}

async fn set_gold(
    State(s): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<GoldRequest>,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let answers = match body {
        GoldRequest::Wrapped { answers } | GoldRequest::Bare(answers) => answers,
    };
    let p = s.platform.clone();
    let count = blocking(move || p.set_gold(&auth.0.user_id, &JobId(id), &answers)).await?;
    Ok(Json(CountResponse { count }).into_response())
}

async fn publish(State(s): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let job = blocking(move || p.publish(&auth.0.user_id, &JobId(id))).await?;
    Ok(Json(job).into_response())
}

async fn close(State(s): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let job = blocking(move || p.close(&auth.0.user_id, &JobId(id))).await?;
    Ok(Json(job).into_response())
}

fn wants_csv(headers: &HeaderMap) -> bool {
    headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.to_ascii_lowercase().contains("text/csv"))
}

async fn results(
    State(s): State<AppState>,
    auth: Auth,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let results = blocking(move || p.results(&auth.0.user_id, &JobId(id))).await?;
    if wants_csv(&headers) {
        Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], results.to_csv()).into_response())
    } else {
        Ok(Json(results).into_response())
    }
}

#[derive(Debug, Deserialize)]
struct KappaQuery {
    raters: Option<u32>,
}

async fn kappa_report(
    State(s): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    Query(q): Query<KappaQuery>,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let report = blocking(move || p.kappa_report(&auth.0.user_id, &JobId(id), q.raters)).await?;
    Ok(Json(report).into_response())
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    min_items: Option<usize>,
}

async fn stats_report(
    State(s): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
    Query(q): Query<StatsQuery>,
) -> ApiResult<Response> {
    auth.require(KITCHEN)?;
    let p = s.platform.clone();
    let report = blocking(move || p.stats_report(&auth.0.user_id, &JobId(id), q.min_items)).await?;
    Ok(Json(report).into_response())
}

// Cafe

const CAFE: &[Role] = &[Role::Worker];

async fn categories(State(s): State<AppState>, auth: Auth) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let p = s.platform.clone();
    let cats = blocking(move || p.categories(&auth.0.user_id)).await?;
    Ok(Json(cats).into_response())
}

#[derive(Debug, Deserialize)]
struct JobsQuery {
    category: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn available_jobs(State(s): State<AppState>, auth: Auth, Query(q): Query<JobsQuery>) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let category = match q.category.as_deref().filter(|c| !c.is_empty()) {
        None => None,
        Some(label) => Some(
            label
                .parse::<Category>()
                .map_err(brewtask_core::Error::from)?,
        ),
    };
    let p = s.platform.clone();
    let jobs = blocking(move || p.list_available(&auth.0.user_id, category)).await?;
    let page = PageQuery {
        limit: q.limit,
        offset: q.offset,
    };
    Ok(Json(Page::of(jobs, &page)).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedUnit {
    pub unit_id: UnitId,
    pub payload: Payload,
    /// The job template with this unit's payload filled in, sanitized.
    pub html: String,
}

/// A claimed instance as sent to the worker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimResponse {
    pub instance_id: InstanceId,
    pub job: JobSummary,
    pub units: Vec<RenderedUnit>,
    pub reserved_at: Timestamp,
    pub expires_at: Timestamp,
}

fn render_claim(s: &AppState, view: ClaimedInstance, template_ref: &str) -> ClaimResponse {
    let template = s.templates.resolve(template_ref);
    ClaimResponse {
        instance_id: view.instance_id,
        job: view.job,
        units: view
            .units
            .into_iter()
            .map(|u| RenderedUnit {
                html: render(&template, &u.payload),
                unit_id: u.unit_id,
                payload: u.payload,
            })
            .collect(),
        reserved_at: view.reserved_at,
        expires_at: view.expires_at,
    }
}

async fn claim(
    State(s): State<AppState>,
    auth: Auth,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let key = idempotency_key(&headers);
    let p = s.platform.clone();
    let (view, template_ref) = blocking(move || {
        let worker = &auth.0.user_id;
        let inst = p.claim_next(worker, &JobId(id), key.as_deref())?;
        let view = p.claimed_view(worker, &inst.id)?;
        let template_ref = p.job(&inst.job_id)?.spec.ui_template_ref;
        Ok((view, template_ref))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(render_claim(&s, view, &template_ref))).into_response())
}

async fn instance_view(State(s): State<AppState>, auth: Auth, Path(id): Path<String>) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let p = s.platform.clone();
    let (view, template_ref) = blocking(move || {
        let view = p.claimed_view(&auth.0.user_id, &InstanceId(id))?;
        let template_ref = p.job(&view.job.id)?.spec.ui_template_ref;
        Ok((view, template_ref))
    })
    .await?;
    Ok(Json(render_claim(&s, view, &template_ref)).into_response())
}

#[derive(Debug, Deserialize)]
struct SubmitRequest {
    answers: BTreeMap<UnitId, Values>,
    #[serde(default)]
    context: Context,
}

async fn submit(
    State(s): State<AppState>,
    auth: Auth,
    headers: HeaderMap,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<SubmitRequest>,
) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let key = idempotency_key(&headers);
    let p = s.platform.clone();
    let ack = blocking(move || {
        p.submit_instance(&auth.0.user_id, &InstanceId(id), &body.answers, body.context, key.as_deref())
    })
    .await?;
    Ok(Json(ack).into_response())
}

async fn rewards(State(s): State<AppState>, _auth: Auth) -> ApiResult<Response> {
    let p = s.platform.clone();
    let items = blocking(move || p.rewards()).await?;
    Ok(Json(items).into_response())
}

async fn purchase(
    State(s): State<AppState>,
    auth: Auth,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let key = idempotency_key(&headers);
    let p = s.platform.clone();
    let coupon = blocking(move || p.purchase_coupon(&auth.0.user_id, &RewardId(id), key.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(coupon)).into_response())
}

async fn coupons(State(s): State<AppState>, auth: Auth, Query(q): Query<PageQuery>) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let p = s.platform.clone();
    let items = blocking(move || p.coupons(&auth.0.user_id)).await?;
    Ok(Json(Page::of(items, &q)).into_response())
}

async fn transactions(State(s): State<AppState>, auth: Auth, Query(q): Query<PageQuery>) -> ApiResult<Response> {
    auth.require(CAFE)?;
    let p = s.platform.clone();
    let items = blocking(move || p.transactions(&auth.0.user_id)).await?;
    Ok(Json(Page::of(items, &q)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExpireResponse {
    pub expired: usize,
}

async fn expire(State(s): State<AppState>, auth: Auth) -> ApiResult<Response> {
    auth.require(&[Role::Admin])?;
    let p = s.platform.clone();
    let expired = blocking(move || {
        let now = p.clock().now();
        p.expire_reservations(now)
    })
    .await?;
    Ok(Json(ExpireResponse { expired }).into_response())
}
