//! Local HTTP judge that answers the remote-judge wire protocol with the
//! deterministic stub grades.

use std::io::Write;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use spatialrl_core::judge::{stub_grades, JudgeGrades, LayoutStats};

use crate::error::CliError;

type Rejection = (StatusCode, Json<Value>);

fn bad_request(message: impl std::fmt::Display) -> Rejection {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message.to_string() })))
}

#[derive(Clone, Copy)]
struct StubState {
    color_scheme: u8,
}

pub fn router(color_scheme: u8) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/judge", post(judge))
        .fallback(|| async { (StatusCode::NOT_FOUND, Json(json!({ "error": "not found" }))) })
        .layer(DefaultBodyLimit::max(32 * 1024 * 1024))
        .with_state(StubState { color_scheme })
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn judge(
    State(state): State<StubState>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<Json<JudgeGrades>, Rejection> {
    let mut multipart = multipart.map_err(|e| bad_request(e.body_text()))?;
    let mut stats: Option<LayoutStats> = None;
    while let Some(field) = multipart.next_field().await.map_err(bad_request)? {
        if field.name() == Some("layout_stats") {
            let text = field.text().await.map_err(bad_request)?;
            let parsed: LayoutStats =
                serde_json::from_str(&text).map_err(|e| bad_request(format!("layout_stats: {e}")))?;
            stats = Some(parsed);
        } else {
            field.bytes().await.map_err(bad_request)?;
        }
    }
    let stats = stats.ok_or_else(|| bad_request("missing `layout_stats` part"))?;
    for (name, v) in [
        ("collision_ratio", stats.collision_ratio),
        ("constraint_ratio", stats.constraint_ratio),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(bad_request(format!("layout_stats.{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(Json(stub_grades(
        stats.collision_ratio,
        stats.constraint_ratio,
        state.color_scheme,
    )))
}

pub fn run(host: &str, port: u16, color_scheme: u8) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Engine(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::Engine(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Engine(e.to_string()))?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        axum::serve(listener, router(color_scheme))
            .await
            .map_err(|e| CliError::Engine(e.to_string()))
    })
}
