//! HTTP surface: scene upload and lookup, health, and the session
//! WebSocket.

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::future::ready;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::connection::{serve_connection, LoopConfig, WireMessage};
use crate::registry::{AttachError, Registry, SharedSession};
use crate::scene_store::{SceneStore, UploadError};
use crate::session::{Session, SessionConfig};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 2 << 30;
pub const REAP_PERIOD: Duration = Duration::from_secs(5);

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SceneStore>,
    pub registry: Arc<Registry>,
    pub session: SessionConfig,
    pub loop_config: LoopConfig,
    pub max_upload_bytes: usize,
}

impl AppState {
    pub fn new(store: Arc<SceneStore>, registry: Arc<Registry>, session: SessionConfig) -> Self {
        Self {
            store,
            registry,
            session,
            loop_config: LoopConfig::default(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_upload_bytes;
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route(
            "/scenes",
            post(upload_scene)
                .get(list_scenes)
                .layer(DefaultBodyLimit::max(limit)),
        )
        .route("/scenes/{id}/manifest", get(scene_manifest))
        .route("/session", get(open_session))
        .with_state(state)
}

/// Serves `state` on `listener` until `shutdown` resolves, reaping expired
/// sessions in the background.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let registry = Arc::clone(&state.registry);
    let reaper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(REAP_PERIOD);
        loop {
            tick.tick().await;
            let n = registry.reap(Instant::now());
            if n > 0 {
                tracing::info!(sessions = n, "expired sessions dropped");
            }
        }
    });
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    reaper.abort();
    result
}

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({"error": code, "message": message.into()})),
    )
        .into_response()
}

async fn upload_scene(State(state): State<AppState>, mut multipart: Multipart) -> Response {
    let mut files = Vec::new();
    let mut manifest = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                return error_response(StatusCode::BAD_REQUEST, "malformed_upload", e.body_text())
            }
        };
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) => {
                return error_response(StatusCode::BAD_REQUEST, "malformed_upload", e.body_text())
            }
        };
        if name == "manifest" {
            match String::from_utf8(bytes.to_vec()) {
                Ok(text) => manifest = Some(text),
                Err(_) => {
                    return error_response(
                        StatusCode::BAD_REQUEST,
                        "invalid_manifest",
                        "manifest is not UTF-8",
                    )
                }
            }
        } else {
            files.push((file_name.unwrap_or(name), bytes.to_vec()));
        }
    }

    let store = Arc::clone(&state.store);
    let outcome = tokio::task::spawn_blocking(move || store.upload(files, manifest)).await;
    match outcome {
        Ok(Ok(stored)) => Json(json!({
            "scene_id": stored.id,
            "frames": stored.scene.frames.len(),
            "duration": stored.scene.manifest.duration(),
        }))
        .into_response(),
        Ok(Err(e)) => {
            let status = if e.is_client_error() {
                StatusCode::BAD_REQUEST
            } else {
                StatusCode::INTERNAL_SERVER_ERROR
            };
            let mut body = json!({"error": e.code(), "message": e.to_string()});
            if let UploadError::Ply { file, offset, .. } = &e {
                body["file"] = json!(file);
                body["offset"] = json!(offset);
            }
            tracing::warn!(error = %e, "upload rejected");
            (status, Json(body)).into_response()
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn list_scenes(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"scenes": state.store.ids()}))
}

async fn scene_manifest(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.store.get(&id) {
        Some(stored) => (
            [(header::CONTENT_TYPE, "application/json")],
            stored.scene.manifest.to_json(),
        )
            .into_response(),
        None => error_response(
            StatusCode::NOT_FOUND,
            "scene_not_found",
            format!("no scene `{id}`"),
        ),
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    scene: Option<String>,
    session: Option<String>,
}

async fn open_session(
    State(state): State<AppState>,
    Query(q): Query<SessionQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let (token, session, resumed) = match &q.session {
        Some(token) => match state.registry.attach(token, Instant::now()) {
            Ok(s) => (token.clone(), s, true),
            Err(AttachError::Unknown) => {
                return error_response(
                    StatusCode::NOT_FOUND,
                    "session_not_found",
                    "unknown session",
                )
            }
            Err(AttachError::Expired) => {
                return error_response(StatusCode::GONE, "session_expired", "session expired")
            }
            Err(AttachError::InUse) => {
                return error_response(
                    StatusCode::CONFLICT,
                    "session_in_use",
                    "session already has a connection",
                )
            }
        },
        None => {
            let Some(scene_id) = &q.scene else {
                return error_response(
                    StatusCode::BAD_REQUEST,
                    "scene_required",
                    "pass ?scene=<id> or ?session=<token>",
                );
            };
            let Some(stored) = state.store.get(scene_id) else {
                return error_response(
                    StatusCode::NOT_FOUND,
                    "scene_not_found",
                    format!("no scene `{scene_id}`"),
                );
            };
            let store = Arc::clone(&state.store);
            let config = state.session.clone();
            let (token, session) = state
                .registry
                .create(|t| Session::new(t, &stored, store, config));
            (token, session, false)
        }
    };
    tracing::info!(session = %token, resumed, "session connected");
    ws.on_upgrade(move |socket| run_socket(socket, state, token, session, resumed))
}

fn from_ws(message: Result<Message, axum::Error>) -> Option<WireMessage> {
    match message {
        Ok(Message::Text(t)) => Some(WireMessage::Text(t.to_string())),
        Ok(Message::Binary(b)) => Some(WireMessage::Binary(b.to_vec())),
        Ok(Message::Ping(_) | Message::Pong(_)) => None,
        Ok(Message::Close(_)) | Err(_) => Some(WireMessage::Close),
    }
}

fn to_ws(message: WireMessage) -> Message {
    match message {
        WireMessage::Text(t) => Message::Text(t.into()),
        WireMessage::Binary(b) => Message::Binary(b.into()),
        WireMessage::Close => Message::Close(None),
    }
}

async fn run_socket(
    socket: WebSocket,
    state: AppState,
    token: String,
    session: SharedSession,
    resumed: bool,
) {
    let (sink, stream) = socket.split();
    let incoming = stream.filter_map(|m| ready(from_ws(m)));
    let outgoing = sink.with(|m: WireMessage| ready(Ok::<_, axum::Error>(to_ws(m))));
    let stats = serve_connection(
        session,
        state.session.importance.clone(),
        resumed,
        incoming,
        outgoing,
        state.loop_config,
    )
    .await;
    state.registry.detach(&token, Instant::now());
    tracing::info!(
        session = %token,
        produced = stats.frames_produced,
        sent = stats.frames_sent,
        dropped = stats.frames_dropped,
        "session disconnected"
    );
}
