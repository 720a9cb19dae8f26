//! Client side of the session service: typed HTTP calls for the batch
//! operations, an NDJSON socket connection, and a driver that plays a
//! served session with a local [`Agent`](supertask_core::Agent).

mod driver;
mod http;
mod tcp;

use std::future::Future;

use supertask_service::api::ApiError;
use supertask_service::protocol::ErrorBody;
use supertask_service::WireMessage;
use thiserror::Error;

pub use driver::{play_session, PlayedSession};
pub use http::HttpClient;
pub use tcp::TcpClient;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach the service: {0}")]
    Http(#[from] reqwest::Error),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
    /// A `/v1/*` operation failed on the server.
    #[error("{0}")]
    Api(ApiError),
    #[error("unexpected HTTP {status}: {body}")]
    Status { status: u16, body: String },
    /// The server answered a protocol message with ERROR.
    #[error("server rejected the message: {:?}: {}", .0.code, .0.message)]
    Rejected(ErrorBody),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// One request, one reply batch.
pub trait Exchange {
    fn exchange(
        &mut self,
        msg: &WireMessage,
    ) -> impl Future<Output = Result<Vec<WireMessage>, ClientError>> + Send;
}
