//! HTTP and WebSocket routes over [`Service`].

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;

use crate::error::AuthError;
use crate::protocol::{EnrollRequest, ErrorBody, FrameChunk, SessionRequest};
use crate::service::Service;

impl IntoResponse for AuthError {
    fn into_response(self) -> Response {
        let status = match &self {
            AuthError::InsufficientSamples { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            AuthError::NotEnrolled { .. } | AuthError::UnknownSession(_) => StatusCode::NOT_FOUND,
            AuthError::BadChunk(_) | AuthError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AuthError::Core(touchguard_core::Error::InvalidInput(_))
            | AuthError::Core(touchguard_core::Error::DimensionMismatch { .. }) => StatusCode::BAD_REQUEST,
            AuthError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(error_body(&self))).into_response()
    }
}

pub fn error_body(e: &AuthError) -> ErrorBody {
    let (needed, floor) = match e {
        AuthError::InsufficientSamples { needed, floor, .. } => (Some(*needed), Some(*floor)),
        _ => (None, None),
    };
    ErrorBody { error: e.to_string(), needed, floor }
}

type Shared = State<Arc<Service>>;

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AuthError> + Send + 'static,
) -> Result<T, AuthError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(AuthError::BadRequest(format!("worker failed: {e}"))))
}

pub use axum::Router;

/// Serves `app` until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn router(service: Arc<Service>) -> Router {
    let limit = service.config().max_body_bytes;
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/config", get(config))
        .route("/users/{id}/enroll", post(enroll))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(session_summary).delete(close_session))
        .route("/sessions/{id}/frames", get(frames_ws).post(frames_post))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(service)
}

async fn config(State(svc): Shared) -> impl IntoResponse {
    Json(svc.config().clone())
}

async fn enroll(State(svc): Shared, Path(id): Path<String>, Json(req): Json<EnrollRequest>) -> Response {
    match blocking(move || svc.enroll(&id, req)).await {
        Ok(summary) => Json(summary).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn open_session(State(svc): Shared, Json(req): Json<SessionRequest>) -> Response {
    match blocking(move || svc.open_session(req)).await {
        Ok(info) => (StatusCode::CREATED, Json(info)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn session_summary(State(svc): Shared, Path(id): Path<String>) -> Response {
    match svc.session_summary(&id) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn close_session(State(svc): Shared, Path(id): Path<String>) -> Response {
    match svc.close_session(&id) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn frames_post(State(svc): Shared, Path(id): Path<String>, Json(chunk): Json<FrameChunk>) -> Response {
    match blocking(move || svc.push_chunk(&id, chunk)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn frames_ws(State(svc): Shared, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    if let Err(e) = svc.session_summary(&id) {
        return e.into_response();
    }
    ws.max_message_size(svc.config().max_body_bytes)
        .on_upgrade(move |socket| stream_frames(socket, svc, id))
}

/// One reply per text message, in order: a chunk reply or an error body.
async fn stream_frames(mut socket: WebSocket, svc: Arc<Service>, id: String) {
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            Message::Binary(_) => {
                let body = ErrorBody { error: "frame chunks are JSON text messages".into(), needed: None, floor: None };
                if send_json(&mut socket, &body).await.is_err() {
                    break;
                }
                continue;
            }
            _ => continue,
        };
        let reply = match serde_json::from_str::<FrameChunk>(&text) {
            Ok(chunk) => {
                let (svc, id) = (svc.clone(), id.clone());
                blocking(move || svc.push_chunk(&id, chunk)).await
            }
            Err(e) => Err(AuthError::BadChunk(e.to_string())),
        };
        let sent = match reply {
            Ok(r) => send_json(&mut socket, &r).await,
            Err(e) => send_json(&mut socket, &error_body(&e)).await,
        };
        if sent.is_err() {
            break;
        }
    }
}

async fn send_json<T: serde::Serialize>(socket: &mut WebSocket, value: &T) -> Result<(), axum::Error> {
    let text = serde_json::to_string(value).expect("wire types serialize");
    socket.send(Message::Text(text.into())).await
}
