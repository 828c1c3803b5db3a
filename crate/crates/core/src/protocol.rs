//! Versioned message envelope and its canonical JSON encoding.
//!
//! Every message is `{"v":1,"type":<name>,"ts":<ms>,"payload":{...}}` with
//! keys in exactly that order and no whitespace; an optional trailing
//! `"dropped":<n>` reports frames discarded for a slow client. Payload keys
//! follow the order of the structs below. See `docs/protocol.md`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gesture::{GestureClass, RobotCommand};
use crate::landmark::{validate_frame, Hand, HandFrame, Landmark};
use crate::robot::RobotState;
use crate::session::Policy;
use crate::tactile::{TactileFrame, GRID};

pub const PROTOCOL_VERSION: u32 = 1;

pub const MESSAGE_TYPES: [&str; 11] = [
    "join",
    "joined",
    "landmark_frame",
    "control_request",
    "control_grant",
    "control_revoked",
    "gesture",
    "command",
    "robot_state",
    "tactile_frame",
    "error",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

impl ProtocolError {
    /// Machine-readable code sent back in an `error` message.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::MalformedMessage(_) => "malformed-message",
            ProtocolError::UnknownType(_) => "unknown-type",
            ProtocolError::UnsupportedVersion(_) => "unsupported-version",
            ProtocolError::SchemaViolation(_) => "schema-violation",
        }
    }

    pub fn to_error_message(&self) -> Message {
        Message::Error(ErrorPayload { code: self.code().into(), detail: self.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinPayload {
    pub session: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinedPayload {
    pub session: String,
    pub user: String,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkPayload {
    pub user: String,
    pub hand: Hand,
    pub ts: u64,
    pub conf: f64,
    pub lm: Vec<[f64; 3]>,
}

impl LandmarkPayload {
    pub fn from_frame(f: &HandFrame) -> Self {
        Self {
            user: f.user_id.clone(),
            hand: f.hand,
            ts: f.timestamp_ms,
            conf: f.confidence,
            lm: f.landmarks.iter().map(|l| l.to_array()).collect(),
        }
    }

    pub fn to_frame(&self) -> HandFrame {
        HandFrame {
            user_id: self.user.clone(),
            hand: self.hand,
            landmarks: self.lm.iter().map(|&[x, y, z]| Landmark { x, y, z }).collect(),
            timestamp_ms: self.ts,
            confidence: self.conf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmptyPayload {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserPayload {
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokedPayload {
    pub user: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GesturePayload {
    pub hand: Hand,
    pub class: GestureClass,
    pub proba: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcpPayload {
    pub pos: [f64; 3],
    /// `[w, x, y, z]`, `w ≥ 0`
    pub quat: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotStatePayload {
    pub q: [f64; 6],
    pub tcp: TcpPayload,
    pub gripper: f64,
    pub ik_unreachable: bool,
}

impl RobotStatePayload {
    pub fn from_state(s: &RobotState) -> Self {
        Self {
            q: s.q,
            tcp: TcpPayload { pos: s.tcp.position_array(), quat: s.tcp.quat_wxyz() },
            gripper: s.gripper_opening,
            ik_unreachable: s.ik_unreachable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TactilePayload {
    pub grid: [[f64; GRID]; GRID],
    pub ts: f64,
}

impl TactilePayload {
    pub fn from_frame(f: &TactileFrame) -> Self {
        Self { grid: f.pressures, ts: f.timestamp_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Join(JoinPayload),
    Joined(JoinedPayload),
    LandmarkFrame(LandmarkPayload),
    ControlRequest,
    ControlGrant(UserPayload),
    ControlRevoked(RevokedPayload),
    Gesture(GesturePayload),
    Command(RobotCommand),
    RobotState(RobotStatePayload),
    TactileFrame(TactilePayload),
    Error(ErrorPayload),
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Join(_) => "join",
            Message::Joined(_) => "joined",
            Message::LandmarkFrame(_) => "landmark_frame",
            Message::ControlRequest => "control_request",
            Message::ControlGrant(_) => "control_grant",
            Message::ControlRevoked(_) => "control_revoked",
            Message::Gesture(_) => "gesture",
            Message::Command(_) => "command",
            Message::RobotState(_) => "robot_state",
            Message::TactileFrame(_) => "tactile_frame",
            Message::Error(_) => "error",
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Message {
        Message::Error(ErrorPayload { code: code.into(), detail: detail.into() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub v: u32,
    pub ts: u64,
    pub message: Message,
    /// Frames dropped for this client since the last delivered message.
    pub dropped: u64,
}

impl Envelope {
    pub fn new(ts: u64, message: Message) -> Self {
        Self { v: PROTOCOL_VERSION, ts, message, dropped: 0 }
    }
}

/// Canonical encoding: fixed key order, no whitespace.
pub fn encode_message(env: &Envelope) -> Vec<u8> {
    // serde_json::Value maps are sorted, so the envelope and payload are
    // written by hand to keep the documented key order
    let mut out = String::with_capacity(128);
    out.push_str("{\"v\":");
    out.push_str(&env.v.to_string());
    out.push_str(",\"type\":\"");
    out.push_str(env.message.type_name());
    out.push_str("\",\"ts\":");
    out.push_str(&env.ts.to_string());
    out.push_str(",\"payload\":");
    out.push_str(&payload_json(&env.message));
    if env.dropped > 0 {
        out.push_str(",\"dropped\":");
        out.push_str(&env.dropped.to_string());
    }
    out.push('}');
    out.into_bytes()
}

fn payload_json(m: &Message) -> String {
    let s = match m {
        Message::Join(p) => serde_json::to_string(p),
        Message::Joined(p) => serde_json::to_string(p),
        Message::LandmarkFrame(p) => serde_json::to_string(p),
        Message::ControlRequest => serde_json::to_string(&EmptyPayload {}),
        Message::ControlGrant(p) => serde_json::to_string(p),
        Message::ControlRevoked(p) => serde_json::to_string(p),
        Message::Gesture(p) => serde_json::to_string(p),
        Message::Command(p) => serde_json::to_string(p),
        Message::RobotState(p) => serde_json::to_string(p),
        Message::TactileFrame(p) => serde_json::to_string(p),
        Message::Error(p) => serde_json::to_string(p),
    };
    s.expect("payload serializes")
}

fn payload<T: DeserializeOwned>(v: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(v).map_err(|e| ProtocolError::SchemaViolation(format!("payload: {e}")))
}

fn all_finite(xs: impl IntoIterator<Item = f64>) -> bool {
    xs.into_iter().all(f64::is_finite)
}

fn check(cond: bool, what: &str) -> Result<(), ProtocolError> {
    if cond {
        Ok(())
    } else {
        Err(ProtocolError::SchemaViolation(what.to_string()))
    }
}

fn validate_message(m: &Message) -> Result<(), ProtocolError> {
    match m {
        Message::LandmarkFrame(p) => {
            let violations = validate_frame(&p.to_frame());
            if !violations.is_empty() {
                let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(ProtocolError::SchemaViolation(joined.join("; ")));
            }
            Ok(())
        }
        Message::Gesture(p) => {
            check(all_finite(p.proba) && p.proba.iter().all(|x| (0.0..=1.0).contains(x)), "proba entries in [0,1]")
        }
        Message::Command(c) => match *c {
            RobotCommand::MoveTcp { x, y, z } => check(all_finite([x, y, z]), "finite command"),
            RobotCommand::SetYaw { yaw } => check(yaw.is_finite(), "finite command"),
            RobotCommand::GripperSet { opening } => check(opening.is_finite() && opening >= 0.0, "opening ≥ 0"),
            RobotCommand::Hold => Ok(()),
        },
        Message::RobotState(p) => check(
            all_finite(p.q.iter().chain(&p.tcp.pos).chain(&p.tcp.quat).cloned()) && p.gripper.is_finite(),
            "finite robot state",
        ),
        Message::TactileFrame(p) => check(
            p.grid.iter().flatten().all(|x| x.is_finite() && *x >= 0.0) && p.ts.is_finite(),
            "tactile cells finite and non-negative",
        ),
        _ => Ok(()),
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::MalformedMessage(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::MalformedMessage("message is not a JSON object".into()));
    };
    let v = match obj.get("v") {
        Some(v) => v.as_u64().ok_or_else(|| ProtocolError::SchemaViolation("v must be an integer".into()))?,
        None => return Err(ProtocolError::SchemaViolation("missing v".into())),
    };
    if v != PROTOCOL_VERSION as u64 {
        return Err(ProtocolError::UnsupportedVersion(v));
    }
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ProtocolError::SchemaViolation("type must be a string".into())),
        None => return Err(ProtocolError::SchemaViolation("missing type".into())),
    };
    if !MESSAGE_TYPES.contains(&kind.as_str()) {
        return Err(ProtocolError::UnknownType(kind));
    }
    for key in obj.keys() {
        if !["v", "type", "ts", "payload", "dropped"].contains(&key.as_str()) {
            return Err(ProtocolError::SchemaViolation(format!("unknown envelope key {key:?}")));
        }
    }
    let ts = obj
        .get("ts")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProtocolError::SchemaViolation("ts must be a non-negative integer".into()))?;
    let dropped = match obj.get("dropped") {
        None => 0,
        Some(d) => d.as_u64().ok_or_else(|| ProtocolError::SchemaViolation("dropped must be an integer".into()))?,
    };
    let body = obj.remove("payload").ok_or_else(|| ProtocolError::SchemaViolation("missing payload".into()))?;
    let message = match kind.as_str() {
        "join" => Message::Join(payload(body)?),
        "joined" => Message::Joined(payload(body)?),
        "landmark_frame" => Message::LandmarkFrame(payload(body)?),
        "control_request" => {
            let _: EmptyPayload = payload(body)?;
            Message::ControlRequest
        }
        "control_grant" => Message::ControlGrant(payload(body)?),
        "control_revoked" => Message::ControlRevoked(payload(body)?),
        "gesture" => Message::Gesture(payload(body)?),
        "command" => Message::Command(payload(body)?),
        "robot_state" => Message::RobotState(payload(body)?),
        "tactile_frame" => Message::TactileFrame(payload(body)?),
        "error" => Message::Error(payload(body)?),
        _ => unreachable!("checked against MESSAGE_TYPES"),
    };
    validate_message(&message)?;
    Ok(Envelope { v: PROTOCOL_VERSION, ts, message, dropped })
}

/// Raw-socket framing: 4-byte big-endian length, then the message bytes.
pub fn frame_with_length(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len() + 4);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
    out
}
