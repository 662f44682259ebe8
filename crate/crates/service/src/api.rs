use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use axum::extract::rejection::JsonRejection;
use axum::extract::{ConnectInfo, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use cotloop_core::engine::{Annotation, CaseStatus, QueueError};
use cotloop_core::model::{QaDataset, Question, Subject};

use crate::error::ApiError;
use crate::scoring::{score_answers, AnswerError};
use crate::store::{NewSubmission, Release, StoreError, VersionMeta};
use crate::views::{
    rank, AnnotationVerdict, DatasetView, HardCaseView, Leaderboard, LeaderboardEntry, Page, PublicQuestion,
    SubmissionView, TIE_RULE,
};
use crate::{AppState, Inner};

const OPENAPI: &str = include_str!("../openapi.json");

pub fn router(state: AppState) -> Router {
    let submit = post(submit).layer(middleware::from_fn_with_state(state.clone(), rate_limit));
    let mut app = Router::new()
        .route("/healthz", get(health))
        .route("/v1/openapi.json", get(openapi))
        .route("/v1/datasets", get(list_versions).post(release))
        .route("/v1/datasets/{version}", get(get_version))
        .route("/v1/submissions", submit)
        .route("/v1/leaderboard", get(leaderboard))
        .route("/v1/hardcases", get(list_hardcases))
        .route("/v1/hardcases/{id}", get(get_hardcase))
        .route("/v1/hardcases/{id}/annotation", post(annotate));
    app = match &state.0.config.ui_dir {
        Some(dir) => app.nest_service("/ui", ServeDir::new(dir)),
        None => app.route("/ui", get(ui_placeholder)).route("/ui/", get(ui_placeholder)),
    };
    app.with_state(state)
}

fn store_error(e: StoreError) -> ApiError {
    match e {
        StoreError::VersionExists(v) => ApiError::conflict("VERSION_IMMUTABLE", format!("version {v} is already released")),
        StoreError::UnknownVersion(v) => ApiError::unprocessable("UNKNOWN_SUPERSEDED", format!("unknown version {v}")),
        e @ StoreError::DropsItems { .. } => ApiError::unprocessable("VERSION_DROPS_ITEMS", e.to_string()),
        e @ StoreError::DuplicateSubmission { .. } => ApiError::conflict("DUPLICATE_SUBMISSION", e.to_string()),
        other => other.into(),
    }
}

/// Runs store and queue work off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> Result<T, ApiError> + Send + 'static,
{
    let inner = state.0.clone();
    tokio::task::spawn_blocking(move || f(&inner)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|r| ApiError::unprocessable("BAD_BODY", r.body_text()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn require_annotator(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    if state.0.secrets.annotator_tokens.iter().any(|t| constant_time_eq(t.as_bytes(), token.as_bytes())) {
        Ok(())
    } else {
        Err(ApiError::unauthorized())
    }
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    match &state.0.secrets.admin_token {
        Some(t) if constant_time_eq(t.as_bytes(), token.as_bytes()) => Ok(()),
        _ => Err(ApiError::unauthorized()),
    }
}

async fn rate_limit(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(limiter) = &state.0.limiter {
        let ip = request
            .extensions()
            .get::<ConnectInfo<SocketAddr>>()
            .map_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED), |c| c.0.ip());
        if limiter.check_key(&ip).is_err() {
            let mut response =
                ApiError::new(StatusCode::TOO_MANY_REQUESTS, "RATE_LIMITED", "too many submissions; retry later").into_response();
            response.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("60"));
            return response;
        }
    }
    next.run(request).await
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    versions: usize,
    hardcase_queue: bool,
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let versions = blocking(&state, |s| s.store.versions().map_err(ApiError::from)).await?.len();
    Ok(Json(Health { status: "ok", versions, hardcase_queue: state.0.queue.is_some() }))
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI)
}

async fn ui_placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>cotloop</title><p>The annotation UI is not built. Set <code>ui_dir</code> to serve it.</p>\n")
}

async fn list_versions(State(state): State<AppState>) -> Result<Json<Vec<VersionMeta>>, ApiError> {
    Ok(Json(blocking(&state, |s| s.store.versions().map_err(ApiError::from)).await?))
}

fn etag(hash: &str) -> String {
    format!("\"{hash}\"")
}

async fn get_version(State(state): State<AppState>, Path(version): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let stored = blocking(&state, move |s| s.store.version(&version).map_err(ApiError::from))
        .await?
        .ok_or_else(|| ApiError::not_found("UNKNOWN_VERSION", "no such dataset version"))?;
    let tag = etag(&stored.meta.manifest_hash);
    let tag_header = HeaderValue::from_str(&tag).map_err(|e| ApiError::internal(e.to_string()))?;
    let cache = HeaderValue::from_static("public, max-age=31536000, immutable");
    let matches = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == tag || t.trim() == "*"));
    if matches {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, tag_header), (header::CACHE_CONTROL, cache)]).into_response());
    }
    let view = DatasetView { meta: stored.meta.clone(), items: stored.dataset.items.iter().map(PublicQuestion::from).collect() };
    Ok(([(header::ETAG, tag_header), (header::CACHE_CONTROL, cache)], Json(view)).into_response())
}

#[derive(Deserialize)]
struct ReleaseBody {
    version: String,
    items: Vec<Question>,
    #[serde(default)]
    supersedes: Option<String>,
}

async fn release(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<ReleaseBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let b = body(payload)?;
    if b.version.trim().is_empty() || b.version.contains(['/', '\0']) {
        return Err(ApiError::unprocessable("BAD_VERSION", "version tags must be non-empty without '/'"));
    }
    if b.items.is_empty() {
        return Err(ApiError::unprocessable("EMPTY_VERSION", "a version needs at least one item"));
    }
    let dataset = QaDataset::new(b.version, b.items).map_err(|e| ApiError::unprocessable("BAD_DATASET", e.to_string()))?;
    let now = (state.0.clock)();
    let outcome = blocking(&state, move |s| s.store.release(&dataset, b.supersedes.as_deref(), now).map_err(store_error)).await?;
    Ok(match outcome {
        Release::Created(meta) => (StatusCode::CREATED, Json(meta)).into_response(),
        Release::Unchanged(meta) => (StatusCode::OK, Json(meta)).into_response(),
    })
}

#[derive(Deserialize)]
struct SubmitBody {
    model_name: String,
    dataset_version: String,
    #[serde(default)]
    answers: BTreeMap<String, String>,
    #[serde(default)]
    resubmit: bool,
}

async fn submit(State(state): State<AppState>, payload: Result<Json<SubmitBody>, JsonRejection>) -> Result<Response, ApiError> {
    let b = body(payload)?;
    let model_name = b.model_name.trim().to_string();
    if model_name.is_empty() || model_name.chars().count() > 200 {
        return Err(ApiError::unprocessable("BAD_MODEL_NAME", "model_name must be 1 to 200 characters"));
    }
    let now = (state.0.clock)();
    let view = blocking(&state, move |s| {
        let stored = s
            .store
            .version(&b.dataset_version)?
            .ok_or_else(|| ApiError::not_found("UNKNOWN_VERSION", "no such dataset version"))?;
        let (answers, report) = score_answers(&stored.dataset, &model_name, &b.answers).map_err(|e| match e {
            AnswerError::UnknownQuestion(id) => {
                ApiError::unprocessable("UNKNOWN_QUESTION", format!("question {id} is not in {}", b.dataset_version))
            }
            AnswerError::Malformed { question_id, answer } => {
                ApiError::unprocessable("MALFORMED_ANSWER", format!("cannot read {answer:?} for {question_id}"))
            }
        })?;
        let new = NewSubmission { model_name, dataset_version: b.dataset_version.clone(), answers, report };
        let saved = s.store.insert_submission(new, b.resubmit, now).map_err(store_error)?;
        Ok(SubmissionView::from(&saved))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Deserialize)]
struct PageQuery {
    version: Option<String>,
    page: Option<usize>,
    per_page: Option<usize>,
    status: Option<CaseStatus>,
    subject: Option<Subject>,
    iteration: Option<u32>,
}

fn paging(q: &PageQuery, max: usize) -> Result<(usize, usize), ApiError> {
    let page = q.page.unwrap_or(1);
    let per_page = q.per_page.unwrap_or(50.min(max));
    if page == 0 || per_page == 0 || per_page > max {
        return Err(ApiError::unprocessable("BAD_PAGE", format!("page starts at 1 and per_page is 1..={max}")));
    }
    Ok((page, per_page))
}

fn slice<T>(items: Vec<T>, page: usize, per_page: usize) -> Vec<T> {
    items.into_iter().skip((page - 1).saturating_mul(per_page)).take(per_page).collect()
}

async fn leaderboard(State(state): State<AppState>, Query(q): Query<PageQuery>) -> Result<Json<Leaderboard>, ApiError> {
    let (page, per_page) = paging(&q, state.0.config.max_page_size)?;
    let board = blocking(&state, move |s| {
        let version = match q.version {
            Some(v) => v,
            None => {
                s.store.versions()?.pop().ok_or_else(|| ApiError::not_found("UNKNOWN_VERSION", "no version released yet"))?.version
            }
        };
        if s.store.version(&version)?.is_none() {
            return Err(ApiError::not_found("UNKNOWN_VERSION", "no such dataset version"));
        }
        let mut subs = s.store.submissions(&version)?;
        rank(&mut subs);
        let total = subs.len();
        let entries = subs
            .iter()
            .enumerate()
            .map(|(i, sub)| LeaderboardEntry {
                rank: i + 1,
                submission_id: sub.id.clone(),
                model_name: sub.model_name.clone(),
                overall: sub.report.overall,
                overall_simple: sub.report.overall_simple,
                per_sitting: sub.report.by_sitting.iter().map(|x| (x.label.clone(), x.score)).collect(),
                per_unit: sub.report.by_unit.iter().map(|x| (x.label.clone(), x.score)).collect(),
                submitted_at: sub.submitted_at,
            })
            .collect();
        Ok(Leaderboard { version, tie_rule: TIE_RULE.to_string(), total, page, per_page, entries: slice(entries, page, per_page) })
    })
    .await?;
    Ok(Json(board))
}

fn queue_error(e: QueueError) -> ApiError {
    match e {
        QueueError::NotFound(id) => ApiError::not_found("UNKNOWN_CASE", format!("no hard case {id}")),
        QueueError::AlreadyAnnotated(id) => ApiError::conflict("ALREADY_ANNOTATED", format!("hard case {id} is already annotated")),
        QueueError::Rejected(e) => ApiError::unprocessable(e.code(), e.to_string()),
        QueueError::Io(e) => {
            tracing::error!(error = %e, "hard-case queue failure");
            ApiError::internal("hard-case queue failure")
        }
    }
}

fn no_queue() -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "NO_QUEUE", "this server has no hard-case queue configured")
}

async fn list_hardcases(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<PageQuery>,
) -> Result<Json<Page<HardCaseView>>, ApiError> {
    require_annotator(&state, &headers)?;
    let (page, per_page) = paging(&q, state.0.config.max_page_size)?;
    let status = q.status.unwrap_or(CaseStatus::Pending);
    let cases = blocking(&state, move |s| s.queue.as_ref().ok_or_else(no_queue)?.list(Some(status)).map_err(queue_error)).await?;
    let views: Vec<HardCaseView> = cases
        .iter()
        .filter(|c| q.subject.is_none_or(|s| c.question.subject == s))
        .filter(|c| q.iteration.is_none_or(|k| c.iteration == k))
        .map(HardCaseView::from)
        .collect();
    Ok(Json(Page { total: views.len(), page, per_page, items: slice(views, page, per_page) }))
}

async fn get_hardcase(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<HardCaseView>, ApiError> {
    require_annotator(&state, &headers)?;
    let case = blocking(&state, move |s| s.queue.as_ref().ok_or_else(no_queue)?.get(&id).map_err(queue_error)).await?;
    case.map(|c| Json(HardCaseView::from(&c))).ok_or_else(|| ApiError::not_found("UNKNOWN_CASE", "no such hard case"))
}

async fn annotate(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    payload: Result<Json<Annotation>, JsonRejection>,
) -> Result<Json<AnnotationVerdict>, ApiError> {
    require_annotator(&state, &headers)?;
    let annotation = body(payload)?;
    if annotation.annotator.trim().is_empty() {
        return Err(ApiError::unprocessable("BAD_BODY", "annotator is required"));
    }
    let min = state.0.config.min_expert_cot_chars;
    let record = blocking(&state, move |s| {
        s.queue.as_ref().ok_or_else(no_queue)?.annotate(&id, &annotation, min).map_err(queue_error)
    })
    .await?;
    Ok(Json(AnnotationVerdict {
        id: record.question_id,
        status: "expert_done".into(),
        iteration: record.iteration,
        cot_chars: record.chain_of_thought.chars().count(),
        annotator: record.created_by,
    }))
}
