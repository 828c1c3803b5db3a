use teleop_core::gesture::RobotCommand;
use teleop_core::protocol::{decode_message, JoinPayload, LandmarkPayload, Message};

use crate::codes;

/// Client messages that reach the session actor.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Join(JoinPayload),
    Landmark(LandmarkPayload),
    ControlRequest,
    Command(RobotCommand),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Forward(Inbound),
    /// Answer the client and keep the connection.
    Reply(Message),
    /// Answer the client, then close.
    Close(Message),
}

/// Handshake and framing rules for one connection, independent of transport.
#[derive(Debug, Clone, Default)]
pub struct ConnState {
    joined: Option<JoinPayload>,
    closed: bool,
}

impl ConnState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn joined(&self) -> Option<&JoinPayload> {
        self.joined.as_ref()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn on_bytes(&mut self, bytes: &[u8]) -> Action {
        let action = match decode_message(bytes) {
            Err(e) => Action::Close(e.to_error_message()),
            Ok(env) => self.on_message(env.message),
        };
        if matches!(action, Action::Close(_)) {
            self.closed = true;
        }
        action
    }

    fn on_message(&mut self, message: Message) -> Action {
        if self.joined.is_none() {
            return match message {
                Message::Join(p) => {
                    self.joined = Some(p.clone());
                    Action::Forward(Inbound::Join(p))
                }
                other => Action::Close(Message::error(
                    codes::NOT_JOINED,
                    format!("{} before join", other.type_name()),
                )),
            };
        }
        match message {
            Message::Join(_) => Action::Reply(Message::error(codes::ALREADY_JOINED, "join sent twice")),
            Message::LandmarkFrame(p) => Action::Forward(Inbound::Landmark(p)),
            Message::ControlRequest => Action::Forward(Inbound::ControlRequest),
            Message::Command(c) => Action::Forward(Inbound::Command(c)),
            other => Action::Reply(Message::error(
                codes::UNEXPECTED_TYPE,
                format!("{} is sent by the server only", other.type_name()),
            )),
        }
    }
}
