//! Network front end for the teleoperation pipeline.
//!
//! Each session is owned by one actor task holding a [`SessionCore`]; every
//! connection feeds it an ordered queue of operations and drains its own
//! [`Outbox`]. Browsers speak WebSocket text frames; raw-socket clients send
//! the same bytes behind a 4-byte big-endian length prefix.

mod conn;
mod outbox;
mod server;
mod session;

pub use conn::{Action, ConnState, Inbound};
pub use outbox::Outbox;
pub use server::{serve, Server, ServerConfig, ServerError};
pub use session::{ConnId, Outgoing, SessionCore, SessionSettings, Target};

/// Error codes the server adds on top of the decoder's.
pub mod codes {
    pub const NOT_JOINED: &str = "not-joined";
    pub const NOT_CONTROLLER: &str = "not-controller";
    pub const ALREADY_JOINED: &str = "already-joined";
    pub const USER_TAKEN: &str = "user-taken";
    pub const USER_MISMATCH: &str = "user-mismatch";
    pub const UNEXPECTED_TYPE: &str = "unexpected-type";
}
