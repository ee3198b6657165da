//! HTTP/JSON front for a human-mode run.
//!
//! The reviewer's client long-polls `GET /api/v1/session/next`, shows the
//! before/after masks, and posts `better` or `worse` to
//! `POST /api/v1/session/verdict`. The engine thread blocks on the shared
//! [`FeedbackHub`] until that verdict lands. `GET /api/v1/run/status` reports
//! progress. Every route requires `Authorization: Bearer <token>` when a
//! token is configured.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use prefseg_core::oracle::{FeedbackHub, HumanVerdict, NextComparison, RunProgress, SessionStatus, SubmitOutcome};

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "PREFSEG_TOKEN";
/// Upper bound on how long `next` holds a request open.
pub const MAX_LONG_POLL: Duration = Duration::from_secs(30);

#[derive(Clone)]
struct AppState {
    hub: Arc<FeedbackHub>,
    token: Option<Arc<str>>,
    long_poll: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub session_id: String,
    pub status: SessionStatus,
    pub verdicts: usize,
    pub progress: RunProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub comparison_id: String,
    pub verdict: HumanVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictAck {
    pub comparison_id: String,
    /// The recorded verdict; for a duplicate, the first one submitted.
    pub verdict: HumanVerdict,
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    session: String,
    /// Optional shorter poll, in milliseconds.
    wait_ms: Option<u64>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ApiError { error: msg.into() })).into_response()
}

/// Reads the token from [`TOKEN_ENV`]; empty counts as unset.
pub fn token_from_env() -> Option<String> {
    std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

pub fn router(hub: Arc<FeedbackHub>, token: Option<String>) -> Router {
    router_with_poll(hub, token, MAX_LONG_POLL)
}

pub fn router_with_poll(hub: Arc<FeedbackHub>, token: Option<String>, long_poll: Duration) -> Router {
    let state = AppState {
        hub,
        token: token.map(Arc::from),
        long_poll: long_poll.min(MAX_LONG_POLL),
    };
    Router::new()
        .route("/api/v1/run/status", get(run_status))
        .route("/api/v1/session/next", get(next_comparison))
        .route("/api/v1/session/verdict", post(submit_verdict))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return error(StatusCode::UNAUTHORIZED, "missing or wrong bearer token");
        }
    }
    next.run(req).await
}

async fn run_status(State(state): State<AppState>) -> Json<RunStatus> {
    let hub = &state.hub;
    Json(RunStatus {
        run_id: hub.progress().run_id,
        session_id: hub.session_id().to_string(),
        status: hub.status(),
        verdicts: hub.verdict_count(),
        progress: hub.progress(),
    })
}

async fn next_comparison(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    let wait = q
        .wait_ms
        .map(Duration::from_millis)
        .unwrap_or(state.long_poll)
        .min(MAX_LONG_POLL);
    let hub = state.hub.clone();
    let res = tokio::task::spawn_blocking(move || hub.next_comparison(&q.session, wait)).await;
    match res {
        Ok(Ok(next)) => Json::<NextComparison>(next).into_response(),
        Ok(Err(e)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn submit_verdict(State(state): State<AppState>, Json(body): Json<VerdictRequest>) -> Response {
    let ack = |verdict, duplicate| {
        Json(VerdictAck {
            comparison_id: body.comparison_id.clone(),
            verdict,
            duplicate,
        })
        .into_response()
    };
    match state.hub.submit_verdict(&body.comparison_id, body.verdict) {
        SubmitOutcome::Accepted(v) => {
            info!("verdict {:?} for {}", v, body.comparison_id);
            ack(v, false)
        }
        SubmitOutcome::Duplicate(first) => ack(first, true),
        SubmitOutcome::Expired => error(
            StatusCode::GONE,
            format!("comparison `{}` expired", body.comparison_id),
        ),
        SubmitOutcome::Unknown => error(
            StatusCode::NOT_FOUND,
            format!("unknown comparison `{}`", body.comparison_id),
        ),
    }
}

/// Serves `app` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    match listener.local_addr() {
        Ok(addr) => info!("feedback service listening on http://{addr}"),
        Err(e) => warn!("listening on an unknown address: {e}"),
    }
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
