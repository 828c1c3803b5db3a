use std::collections::BTreeMap;

use teleop_core::gesture::FsmConfig;
use teleop_core::pipeline::{Classifier, Pipeline, PipelineConfig};
use teleop_core::protocol::{
    GesturePayload, JoinedPayload, LandmarkPayload, Message, RevokedPayload, RobotStatePayload, TactilePayload,
    UserPayload,
};
use teleop_core::scene::{CellConfig, Scene};
use teleop_core::session::{ArbitrationEvent, Policy, RouteOutcome, DEFAULT_IDLE_TIMEOUT_MS};
use teleop_core::tactile::TactileClock;
use teleop_core::gesture::RobotCommand;

use crate::codes;

pub type ConnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    Conn(ConnId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Target,
    pub message: Message,
}

impl Outgoing {
    fn all(message: Message) -> Self {
        Self { to: Target::All, message }
    }

    fn to(conn: ConnId, message: Message) -> Self {
        Self { to: Target::Conn(conn), message }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSettings {
    pub policy: Policy,
    pub idle_timeout_ms: u64,
    pub robot_state_hz: u64,
    pub tactile_hz: u64,
    pub fsm: FsmConfig,
    pub cell: CellConfig,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            policy: Policy::ExclusiveToken,
            idle_timeout_ms: DEFAULT_IDLE_TIMEOUT_MS,
            robot_state_hz: 30,
            tactile_hz: 30,
            fsm: FsmConfig::default(),
            cell: CellConfig::default(),
        }
    }
}

fn arbitration_message(e: ArbitrationEvent) -> Message {
    match e {
        ArbitrationEvent::ControlGranted { user } => Message::ControlGrant(UserPayload { user }),
        ArbitrationEvent::ControlRevoked { user, reason } => Message::ControlRevoked(RevokedPayload { user, reason }),
    }
}

/// All state of one session. Every method takes the session clock in
/// milliseconds and returns the messages to deliver.
#[derive(Debug)]
pub struct SessionCore {
    id: String,
    pipeline: Pipeline,
    members: BTreeMap<ConnId, String>,
    state_clock: TactileClock,
    tactile_clock: TactileClock,
}

impl SessionCore {
    pub fn new(id: &str, classifier: Classifier, scene: Scene, settings: &SessionSettings) -> Self {
        let config = PipelineConfig {
            session_id: id.to_string(),
            policy: settings.policy,
            idle_timeout_ms: settings.idle_timeout_ms,
            fsm: settings.fsm.clone(),
            cell: settings.cell.clone(),
        };
        Self {
            id: id.to_string(),
            pipeline: Pipeline::new(classifier, config, scene),
            members: BTreeMap::new(),
            state_clock: TactileClock::new(settings.robot_state_hz),
            tactile_clock: TactileClock::new(settings.tactile_hz),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn members(&self) -> &BTreeMap<ConnId, String> {
        &self.members
    }

    /// `Err` carries the error to send before closing the connection.
    pub fn join(&mut self, conn: ConnId, user: &str, now_ms: u64) -> Result<Vec<Outgoing>, Message> {
        if self.members.values().any(|u| u == user) {
            return Err(Message::error(codes::USER_TAKEN, format!("user {user} is already connected")));
        }
        self.pipeline.join(user, now_ms);
        self.members.insert(conn, user.to_string());
        let mut out = vec![Outgoing::to(
            conn,
            Message::Joined(JoinedPayload {
                session: self.id.clone(),
                user: user.to_string(),
                policy: self.pipeline.config().policy,
            }),
        )];
        if let Some(holder) = &self.pipeline.session().token_holder {
            out.push(Outgoing::to(conn, Message::ControlGrant(UserPayload { user: holder.clone() })));
        }
        Ok(out)
    }

    /// Drops the connection's FSM and passes the token on if it held it.
    pub fn leave(&mut self, conn: ConnId, now_ms: u64) -> Vec<Outgoing> {
        let Some(user) = self.members.remove(&conn) else { return Vec::new() };
        self.pipeline.leave(&user, now_ms).into_iter().map(|e| Outgoing::all(arbitration_message(e))).collect()
    }

    pub fn landmark(&mut self, conn: ConnId, payload: &LandmarkPayload, now_ms: u64) -> Vec<Outgoing> {
        let Some(user) = self.members.get(&conn) else { return Vec::new() };
        if payload.user != *user {
            return vec![Outgoing::to(
                conn,
                Message::error(codes::USER_MISMATCH, format!("frame for {} on {user}'s connection", payload.user)),
            )];
        }
        let frame = payload.to_frame();
        let outcome = match self.pipeline.process_frame(&frame, now_ms) {
            Ok(o) => o,
            Err(e) => return vec![Outgoing::to(conn, Message::error(codes::NOT_JOINED, e.to_string()))],
        };
        let mut out = vec![Outgoing::all(Message::Gesture(GesturePayload {
            hand: frame.hand,
            class: outcome.prediction.class,
            proba: outcome.prediction.proba,
        }))];
        out.extend(outcome.arbitration.into_iter().map(|e| Outgoing::all(arbitration_message(e))));
        out.extend(outcome.accepted.into_iter().map(|r| Outgoing::all(Message::Command(r.cmd))));
        out.extend(
            outcome
                .rejected
                .into_iter()
                .map(|(r, reason)| Outgoing::to(conn, Message::error(&reason, format!("{:?} not applied", r.cmd)))),
        );
        out
    }

    pub fn control_request(&mut self, conn: ConnId, now_ms: u64) -> Vec<Outgoing> {
        let Some(user) = self.members.get(&conn).cloned() else { return Vec::new() };
        match self.pipeline.request_control(&user, now_ms) {
            Ok((_, events)) => events.into_iter().map(|e| Outgoing::all(arbitration_message(e))).collect(),
            Err(e) => vec![Outgoing::to(conn, Message::error(codes::NOT_JOINED, e.to_string()))],
        }
    }

    pub fn command(&mut self, conn: ConnId, cmd: RobotCommand, now_ms: u64) -> Vec<Outgoing> {
        let Some(user) = self.members.get(&conn).cloned() else { return Vec::new() };
        match self.pipeline.submit_command(&user, cmd, now_ms) {
            Ok((outcome, events)) => {
                let mut out: Vec<_> = events.into_iter().map(|e| Outgoing::all(arbitration_message(e))).collect();
                match outcome {
                    RouteOutcome::Accepted(c) => out.push(Outgoing::all(Message::Command(c))),
                    RouteOutcome::Rejected(reason) => {
                        out.push(Outgoing::to(conn, Message::error(&reason, format!("{cmd:?} not applied"))))
                    }
                }
                out
            }
            Err(e) => vec![Outgoing::to(conn, Message::error(codes::NOT_JOINED, e.to_string()))],
        }
    }

    /// Advances the cell and emits whatever state and tactile frames fell due.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Outgoing> {
        let mut out: Vec<_> =
            self.pipeline.advance_to(now_ms).into_iter().map(|e| Outgoing::all(arbitration_message(e))).collect();
        let until = now_ms as f64 + 1.0;
        if !self.state_clock.due(until).is_empty() {
            out.push(Outgoing::all(Message::RobotState(RobotStatePayload::from_state(self.pipeline.cell().state()))));
        }
        for t in self.tactile_clock.due(until) {
            out.push(Outgoing::all(Message::TactileFrame(TactilePayload::from_frame(&self.pipeline.cell().tactile_frame(t)))));
        }
        out
    }
}
