//! Session service: plays engine sessions over a message protocol and
//! exposes the batch operations (simulate, analyze, fit, recover,
//! benchmark) as JSON endpoints.
//!
//! Two transports share one [`table::SessionTable`]:
//! newline-delimited JSON over a TCP socket, and `POST /v1/message`,
//! which takes one [`protocol::WireMessage`] and returns the reply batch
//! as a JSON array.

pub mod api;
pub mod ops;
pub mod protocol;
pub mod server;
pub mod table;

pub use protocol::{ErrorCode, MessageKind, WireMessage};
pub use server::{serve_until, start, ServeConfig, ServeError, Service};
pub use table::{SessionTable, TableConfig};
