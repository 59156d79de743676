//! HTTP routes over [`Service`].
//!
//! - `POST /api/commands`: a JSON [`Request`], bearer token in `Authorization`.
//! - `GET /api/markets`, `GET /api/markets/{id}/book`.
//! - `GET /api/markets/{id}/events?from=N`: server-sent events, resumable
//!   through `from` or `Last-Event-ID`.
//! - `GET /api/positions` (account token), `GET /api/ledger` (admin token).
//! - `GET /healthz`.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use hybrid_core::engine::MarketId;
use hybrid_core::venue::Event;
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::service::{ErrorKind, Request, Service, ServiceError};

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        let status = match self.0.kind {
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ErrorKind::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorKind::Forbidden => StatusCode::FORBIDDEN,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({"error": self.0.message}))).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/commands", post(command))
        .route("/api/markets", get(markets))
        .route("/api/markets/{id}/book", get(book))
        .route("/api/markets/{id}/events", get(events))
        .route("/api/positions", get(positions))
        .route("/api/ledger", get(ledger))
        .with_state(service)
}

async fn command(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    body: Result<Json<Request>, JsonRejection>,
) -> Result<HttpResponse, ApiError> {
    let Json(req) = body.map_err(|e| ServiceError::new(ErrorKind::BadRequest, e.body_text()))?;
    Ok(Json(svc.execute(bearer(&headers), req)?).into_response())
}

async fn markets(State(svc): State<Arc<Service>>) -> HttpResponse {
    Json(svc.markets()).into_response()
}

async fn book(State(svc): State<Arc<Service>>, Path(id): Path<u64>) -> Result<HttpResponse, ApiError> {
    Ok(Json(svc.book(MarketId(id))?).into_response())
}

async fn positions(State(svc): State<Arc<Service>>, headers: HeaderMap) -> Result<HttpResponse, ApiError> {
    Ok(Json(svc.execute(bearer(&headers), Request::GetPositions {})?).into_response())
}

async fn ledger(State(svc): State<Arc<Service>>, headers: HeaderMap) -> Result<HttpResponse, ApiError> {
    Ok(Json(svc.ledger(bearer(&headers))?).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

fn sse_event(e: &Event) -> SseEvent {
    let data = serde_json::to_string(e).expect("events serialize");
    SseEvent::default().id(e.seq.to_string()).event(e.payload.kind()).data(data)
}

async fn events(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let market = MarketId(id);
    let resume =
        headers.get("last-event-id").and_then(|v| v.to_str().ok()?.trim().parse::<u64>().ok()).map(|last| last + 1);
    let from = q.from.or(resume).unwrap_or(0);
    svc.events(market, from)?;
    let rx = svc.subscribe();
    let stream =
        futures::stream::unfold((svc, rx, from, VecDeque::new()), move |(svc, mut rx, next, mut buf)| async move {
            let mut next = next;
            loop {
                if let Some(e) = buf.pop_front() {
                    return Some((Ok(sse_event(&e)), (svc, rx, next, buf)));
                }
                // Mark the current version seen before reading, so a commit that
                // lands after the read still wakes us.
                rx.borrow_and_update();
                if svc.is_closed() {
                    return None;
                }
                let fresh = svc.events(market, next).ok()?;
                if fresh.is_empty() {
                    rx.changed().await.ok()?;
                    continue;
                }
                next += fresh.len() as u64;
                buf.extend(fresh);
            }
        });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Serves until `shutdown` resolves, then syncs the journal.
pub async fn serve(
    service: Arc<Service>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let svc = service.clone();
    let shutdown = async move {
        shutdown.await;
        svc.close();
    };
    axum::serve(listener, router(service.clone())).with_graceful_shutdown(shutdown).await?;
    service.sync()
}
