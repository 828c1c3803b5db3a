//! Multi-user floor control for one robot session.
//!
//! Under `ExclusiveToken` one user at a time holds the right to command the
//! robot; others wait in a FIFO queue and the token moves on when the holder
//! goes idle or leaves. `LastWriter` accepts everyone's commands.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::RobotCommand;

pub const DEFAULT_IDLE_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    ExclusiveToken,
    LastWriter,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::ExclusiveToken => "exclusive_token",
            Policy::LastWriter => "last_writer",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclusive_token" | "exclusive" => Ok(Policy::ExclusiveToken),
            "last_writer" => Ok(Policy::LastWriter),
            other => Err(format!("unknown policy {other:?} (expected exclusive_token or last_writer)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("user {0} has not joined the session")]
    UnknownUser(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    Granted,
    /// 1-based position in the wait queue.
    Queued(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ArbitrationEvent {
    ControlGranted { user: String },
    ControlRevoked { user: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteOutcome {
    Accepted(RobotCommand),
    Rejected(String),
}

pub const REJECT_NOT_CONTROLLER: &str = "not-controller";
pub const REJECT_NOT_JOINED: &str = "not-joined";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub users: BTreeSet<String>,
    pub policy: Policy,
    pub token_holder: Option<String>,
    pub request_queue: VecDeque<String>,
    pub holder_last_active_ms: u64,
    pub idle_timeout_ms: u64,
}

impl Session {
    pub fn new(session_id: &str, policy: Policy, idle_timeout_ms: u64) -> Self {
        Self {
            session_id: session_id.to_string(),
            users: BTreeSet::new(),
            policy,
            token_holder: None,
            request_queue: VecDeque::new(),
            holder_last_active_ms: 0,
            idle_timeout_ms,
        }
    }

    /// Adds the user; joining never transfers control.
    pub fn join(&mut self, user: &str, _now_ms: u64) {
        self.users.insert(user.to_string());
    }

    fn require_member(&self, user: &str) -> Result<(), SessionError> {
        if self.users.contains(user) {
            Ok(())
        } else {
            Err(SessionError::UnknownUser(user.to_string()))
        }
    }

    pub fn request_control(&mut self, user: &str, now_ms: u64) -> Result<RequestOutcome, SessionError> {
        self.require_member(user)?;
        if self.policy == Policy::LastWriter {
            return Ok(RequestOutcome::Granted);
        }
        match &self.token_holder {
            Some(h) if h == user => Ok(RequestOutcome::Granted),
            Some(_) => {
                if let Some(pos) = self.request_queue.iter().position(|u| u == user) {
                    return Ok(RequestOutcome::Queued(pos + 1));
                }
                self.request_queue.push_back(user.to_string());
                Ok(RequestOutcome::Queued(self.request_queue.len()))
            }
            None => {
                self.request_queue.retain(|u| u != user);
                self.token_holder = Some(user.to_string());
                self.holder_last_active_ms = now_ms;
                Ok(RequestOutcome::Granted)
            }
        }
    }

    /// Records activity (landmark frames) from `user`; refreshes the idle
    /// timer when the user holds the token.
    pub fn touch(&mut self, user: &str, now_ms: u64) {
        if self.token_holder.as_deref() == Some(user) {
            self.holder_last_active_ms = self.holder_last_active_ms.max(now_ms);
        }
    }

    fn grant_next(&mut self, now_ms: u64, events: &mut Vec<ArbitrationEvent>) {
        if self.token_holder.is_some() {
            return;
        }
        if let Some(next) = self.request_queue.pop_front() {
            self.token_holder = Some(next.clone());
            self.holder_last_active_ms = now_ms;
            events.push(ArbitrationEvent::ControlGranted { user: next });
        }
    }

    /// Revokes an idle holder and hands the token to the head of the queue.
    pub fn tick(&mut self, now_ms: u64) -> Vec<ArbitrationEvent> {
        let mut events = Vec::new();
        if self.policy == Policy::LastWriter {
            return events;
        }
        if let Some(holder) = self.token_holder.clone() {
            if now_ms.saturating_sub(self.holder_last_active_ms) > self.idle_timeout_ms {
                self.token_holder = None;
                events.push(ArbitrationEvent::ControlRevoked { user: holder, reason: "idle".into() });
            }
        }
        self.grant_next(now_ms, &mut events);
        events
    }

    /// Removes the user, passing the token on if they held it.
    pub fn leave(&mut self, user: &str, now_ms: u64) -> Vec<ArbitrationEvent> {
        let mut events = Vec::new();
        self.users.remove(user);
        self.request_queue.retain(|u| u != user);
        if self.token_holder.as_deref() == Some(user) {
            self.token_holder = None;
            events.push(ArbitrationEvent::ControlRevoked { user: user.to_string(), reason: "left".into() });
            self.grant_next(now_ms, &mut events);
        }
        events
    }

    pub fn route_command(&mut self, user: &str, cmd: RobotCommand, now_ms: u64) -> RouteOutcome {
        if !self.users.contains(user) {
            return RouteOutcome::Rejected(REJECT_NOT_JOINED.into());
        }
        match self.policy {
            Policy::LastWriter => RouteOutcome::Accepted(cmd),
            Policy::ExclusiveToken => {
                if self.token_holder.as_deref() == Some(user) {
                    self.holder_last_active_ms = self.holder_last_active_ms.max(now_ms);
                    RouteOutcome::Accepted(cmd)
                } else {
                    RouteOutcome::Rejected(REJECT_NOT_CONTROLLER.into())
                }
            }
        }
    }

    /// Routes a command, first granting the token to the sender if nobody
    /// holds it and nobody is waiting.
    pub fn route_with_auto_grant(
        &mut self,
        user: &str,
        cmd: RobotCommand,
        now_ms: u64,
    ) -> (RouteOutcome, Vec<ArbitrationEvent>) {
        let mut events = Vec::new();
        if self.policy == Policy::ExclusiveToken
            && self.token_holder.is_none()
            && self.request_queue.is_empty()
            && self.users.contains(user)
            && self.request_control(user, now_ms) == Ok(RequestOutcome::Granted)
        {
            events.push(ArbitrationEvent::ControlGranted { user: user.to_string() });
        }
        (self.route_command(user, cmd, now_ms), events)
    }

    /// Holds for every reachable state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(h) = &self.token_holder {
            if self.request_queue.contains(h) {
                return Err(format!("holder {h} is also queued"));
            }
        }
        let unique: BTreeSet<_> = self.request_queue.iter().collect();
        if unique.len() != self.request_queue.len() {
            return Err("queue has duplicates".into());
        }
        Ok(())
    }
}
