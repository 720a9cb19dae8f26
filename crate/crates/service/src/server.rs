//! HTTP and NDJSON transports over one [`SessionTable`].

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tokio_util::codec::{Framed, LinesCodec, LinesCodecError};
use tokio_util::sync::CancellationToken;
use tokio_util::task::TaskTracker;

use crate::api::{ApiError, ApiErrorCode};
use crate::ops;
use crate::protocol::{ErrorCode, MessageKind, WireMessage, PROTOCOL_VERSION};
use crate::table::{SessionTable, TableConfig};

/// Longest accepted NDJSON line.
pub const MAX_LINE_BYTES: usize = 1 << 20;
/// Largest accepted HTTP request body; analyze requests carry whole logs.
pub const MAX_BODY_BYTES: usize = 1 << 30;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    /// HTTP port; 0 picks a free one.
    pub port: u16,
    /// NDJSON socket port; `None` disables the socket.
    pub tcp_port: Option<u16>,
    pub max_sessions: usize,
    pub log_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 7878,
            tcp_port: Some(7879),
            max_sessions: 64,
            log_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot prepare log directory: {0}")]
    LogDir(io::Error),
    #[error("server task failed: {0}")]
    Task(String),
    #[error("flushing logs failed: {0}")]
    Flush(io::Error),
}

/// A running service. Dropping it without [`Service::shutdown`] aborts
/// nothing; the tasks keep running until the runtime stops.
pub struct Service {
    http_addr: SocketAddr,
    tcp_addr: Option<SocketAddr>,
    table: Arc<SessionTable>,
    token: CancellationToken,
    tracker: TaskTracker,
    http: JoinHandle<io::Result<()>>,
    tcp: Option<JoinHandle<()>>,
}

impl Service {
    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    pub fn table(&self) -> &Arc<SessionTable> {
        &self.table
    }

    /// Stops accepting, waits for open connections to finish their
    /// current message, then syncs every session log.
    pub async fn shutdown(self) -> Result<(), ServeError> {
        self.token.cancel();
        let http = self
            .http
            .await
            .map_err(|e| ServeError::Task(e.to_string()))?;
        if let Some(tcp) = self.tcp {
            tcp.await.map_err(|e| ServeError::Task(e.to_string()))?;
        }
        self.tracker.close();
        self.tracker.wait().await;
        http.map_err(|e| ServeError::Task(e.to_string()))?;
        let table = self.table.clone();
        tokio::task::spawn_blocking(move || table.sync_logs())
            .await
            .map_err(|e| ServeError::Task(e.to_string()))?
            .map_err(ServeError::Flush)?;
        tracing::info!("service stopped; logs flushed");
        Ok(())
    }
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, ServeError> {
    let addr = format!("{host}:{port}");
    TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Binds both endpoints and starts serving in the background.
pub async fn start(config: ServeConfig) -> Result<Service, ServeError> {
    let table = Arc::new(
        SessionTable::new(TableConfig {
            max_sessions: config.max_sessions,
            log_dir: config.log_dir.clone(),
        })
        .map_err(ServeError::LogDir)?,
    );
    let http_listener = bind(&config.host, config.port).await?;
    let tcp_listener = match config.tcp_port {
        Some(p) => Some(bind(&config.host, p).await?),
        None => None,
    };
    let http_addr = http_listener
        .local_addr()
        .map_err(|e| ServeError::Task(e.to_string()))?;
    let tcp_addr = tcp_listener.as_ref().and_then(|l| l.local_addr().ok());
    let token = CancellationToken::new();
    let tracker = TaskTracker::new();

    let app = router(table.clone());
    let stop = token.clone();
    let http = tokio::spawn(async move {
        axum::serve(http_listener, app)
            .with_graceful_shutdown(stop.cancelled_owned())
            .await
    });
    let tcp = tcp_listener.map(|l| {
        tokio::spawn(accept_loop(
            l,
            table.clone(),
            token.clone(),
            tracker.clone(),
        ))
    });
    tracing::info!(%http_addr, tcp_addr = ?tcp_addr, max_sessions = config.max_sessions, "service listening");
    Ok(Service {
        http_addr,
        tcp_addr,
        table,
        token,
        tracker,
        http,
        tcp,
    })
}

/// Serves until `signal` resolves, then shuts down cleanly.
pub async fn serve_until(
    config: ServeConfig,
    signal: impl Future<Output = ()>,
) -> Result<(), ServeError> {
    let service = start(config).await?;
    signal.await;
    service.shutdown().await
}

pub fn router(table: Arc<SessionTable>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/message", post(message))
        .route("/v1/simulate", post(|b: Bytes| op(b, ops::simulate)))
        .route("/v1/analyze", post(|b: Bytes| op(b, ops::analyze)))
        .route("/v1/fit", post(|b: Bytes| op(b, ops::fit)))
        .route("/v1/recover", post(|b: Bytes| op(b, ops::recover)))
        .route("/v1/benchmark", post(|b: Bytes| op(b, ops::benchmark)))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(table)
}

async fn health(State(table): State<Arc<SessionTable>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "protocol": PROTOCOL_VERSION,
        "active_sessions": table.active_sessions(),
    }))
}

async fn message(State(table): State<Arc<SessionTable>>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t.to_string(),
        Err(_) => {
            let err = WireMessage::error(
                ErrorCode::BadMessage,
                None,
                None,
                "request body is not UTF-8",
            );
            return Json(vec![err]).into_response();
        }
    };
    match tokio::task::spawn_blocking(move || table.handle_text(&text)).await {
        Ok(replies) => Json(replies).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.code {
            ApiErrorCode::BadRequest | ApiErrorCode::BadConfig => StatusCode::BAD_REQUEST,
            ApiErrorCode::BadLog => StatusCode::UNPROCESSABLE_ENTITY,
            ApiErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self)).into_response()
    }
}

async fn op<Req, Resp>(
    body: Bytes,
    f: fn(&Req) -> Result<Resp, ApiError>,
) -> Result<Json<Resp>, ApiError>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(ApiErrorCode::BadRequest, format!("malformed request: {e}")))?;
    tokio::task::spawn_blocking(move || f(&req))
        .await
        .map_err(|e| ApiError::new(ApiErrorCode::Internal, e.to_string()))?
        .map(Json)
}

async fn accept_loop(
    listener: TcpListener,
    table: Arc<SessionTable>,
    token: CancellationToken,
    tracker: TaskTracker,
) {
    loop {
        tokio::select! {
            _ = token.cancelled() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tracker.spawn(connection(stream, peer, table.clone(), token.clone()));
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            },
        }
    }
}

/// One NDJSON connection. An ACT without a session id goes to the
/// session this connection last created or resumed.
async fn connection(
    stream: TcpStream,
    peer: SocketAddr,
    table: Arc<SessionTable>,
    token: CancellationToken,
) {
    tracing::debug!(%peer, "connection opened");
    if let Err(e) = stream.set_nodelay(true) {
        tracing::debug!(%peer, "cannot set TCP_NODELAY: {e}");
    }
    let mut lines = Framed::new(stream, LinesCodec::new_with_max_length(MAX_LINE_BYTES));
    let mut current: Option<String> = None;
    loop {
        let next = tokio::select! {
            _ = token.cancelled() => break,
            next = lines.next() => next,
        };
        let replies = match next {
            None => break,
            Some(Ok(line)) if line.trim().is_empty() => continue,
            Some(Ok(line)) => {
                let table = table.clone();
                let default = current.clone();
                let handled = tokio::task::spawn_blocking(move || {
                    match serde_json::from_str::<WireMessage>(&line) {
                        Ok(mut msg) => {
                            if msg.kind == MessageKind::Act && msg.session_id.is_none() {
                                msg.session_id = default;
                            }
                            table.handle(msg)
                        }
                        Err(_) => table.handle_text(&line),
                    }
                })
                .await;
                match handled {
                    Ok(r) => r,
                    Err(e) => {
                        tracing::error!("handler panicked: {e}");
                        break;
                    }
                }
            }
            Some(Err(LinesCodecError::MaxLineLengthExceeded)) => vec![WireMessage::error(
                ErrorCode::BadMessage,
                None,
                None,
                format!("line longer than {MAX_LINE_BYTES} bytes"),
            )],
            Some(Err(LinesCodecError::Io(e))) => {
                tracing::debug!(%peer, "read failed: {e}");
                break;
            }
        };
        for r in &replies {
            if matches!(r.kind, MessageKind::SessionNew | MessageKind::Hello)
                && r.session_id.is_some()
            {
                current = r.session_id.clone();
            }
        }
        for r in replies {
            let line = serde_json::to_string(&r).expect("wire messages serialize");
            if let Err(e) = lines.feed(line).await {
                tracing::debug!(%peer, "write failed: {e}");
                return;
            }
        }
        if let Err(e) = SinkExt::<String>::flush(&mut lines).await {
            tracing::debug!(%peer, "write failed: {e}");
            return;
        }
    }
    tracing::debug!(%peer, "connection closed");
}
