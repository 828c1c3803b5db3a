//! Frame-to-robot pipeline: classifier, per-user gesture FSMs, floor
//! control and the simulated cell, plus the recorders used by replay and
//! headless simulation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{feature_vector, FEATURE_LEN};
use crate::gbdt::{argmax, Ensemble, GbdtError};
use crate::gesture::{FsmConfig, FsmEvent, GestureClass, GestureFsm, Prediction, RobotCommand};
use crate::landmark::{Hand, HandFrame};
use crate::scene::{Cell, CellConfig, CellEvent, ObjectKind, Scene};
use crate::session::{ArbitrationEvent, Policy, RouteOutcome, Session, DEFAULT_IDLE_TIMEOUT_MS};
use crate::synth::scripted_frame;
use crate::tactile::{footprint, Footprint, GRID};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("user {0} has not joined")]
    NotJoined(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
}

/// Feature extraction plus the boosted ensemble.
#[derive(Debug, Clone)]
pub struct Classifier {
    model: Ensemble,
}

impl Classifier {
    pub fn new(model: Ensemble) -> Result<Self, GbdtError> {
        if model.n_features != FEATURE_LEN {
            return Err(GbdtError::DimensionMismatch { expected: FEATURE_LEN, got: model.n_features });
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &Ensemble {
        &self.model
    }

    /// Degenerate hands are reported as NoGesture with zero confidence so
    /// the FSM ignores them.
    pub fn classify(&self, frame: &HandFrame) -> Prediction {
        let proba = feature_vector(frame)
            .ok()
            .and_then(|f| self.model.predict_proba(f.as_slice()).ok());
        match proba {
            Some(p) => Prediction {
                class: GestureClass::from_index(argmax(&p)).expect("class index"),
                proba: p,
                frame: frame.clone(),
            },
            None => Prediction { class: GestureClass::NoGesture, proba: [0.0; 4], frame: frame.clone() },
        }
    }
}

/// One accepted command, as written by replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub ts: u64,
    pub user: String,
    pub hand: Hand,
    pub cmd: RobotCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub prediction: Prediction,
    /// Stable class of the frame's hand after the step.
    pub stable: GestureClass,
    pub fsm_events: Vec<FsmEvent>,
    pub arbitration: Vec<ArbitrationEvent>,
    pub accepted: Vec<CommandRecord>,
    pub rejected: Vec<(CommandRecord, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub session_id: String,
    pub policy: Policy,
    pub idle_timeout_ms: u64,
    pub fsm: FsmConfig,
    pub cell: CellConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            session_id: "default".into(),
            policy: Policy::ExclusiveToken,
            idle_timeout_ms: DEFAULT_IDLE_TIMEOUT_MS,
            fsm: FsmConfig::default(),
            cell: CellConfig::default(),
        }
    }
}

/// Everything behind one session. Frames are processed one at a time, each
/// as a single-hand FSM step; the cell only moves in [`Pipeline::advance_to`].
#[derive(Debug, Clone)]
pub struct Pipeline {
    classifier: Classifier,
    config: PipelineConfig,
    fsms: BTreeMap<String, GestureFsm>,
    session: Session,
    cell: Cell,
    recorder: Option<StateRecorder>,
}

impl Pipeline {
    pub fn new(classifier: Classifier, config: PipelineConfig, scene: Scene) -> Self {
        let session = Session::new(&config.session_id, config.policy, config.idle_timeout_ms);
        let cell = Cell::new(config.cell.clone(), scene);
        Self { classifier, config, fsms: BTreeMap::new(), session, cell, recorder: None }
    }

    /// Records a state log while the cell advances.
    pub fn with_recorder(mut self, log_every_ms: u64) -> Self {
        self.recorder = Some(StateRecorder::new(&self.cell, log_every_ms));
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn recorder(&self) -> Option<&StateRecorder> {
        self.recorder.as_ref()
    }

    pub fn join(&mut self, user: &str, now_ms: u64) {
        self.session.join(user, now_ms);
        self.fsms.entry(user.to_string()).or_insert_with(|| GestureFsm::new(self.config.fsm.clone()));
    }

    /// Drops the user's FSM and releases their place in the session.
    pub fn leave(&mut self, user: &str, now_ms: u64) -> Vec<ArbitrationEvent> {
        self.fsms.remove(user);
        self.session.leave(user, now_ms)
    }

    pub fn request_control(
        &mut self,
        user: &str,
        now_ms: u64,
    ) -> Result<(crate::session::RequestOutcome, Vec<ArbitrationEvent>), PipelineError> {
        let had = self.session.token_holder.clone();
        let out = self
            .session
            .request_control(user, now_ms)
            .map_err(|_| PipelineError::NotJoined(user.to_string()))?;
        let mut events = Vec::new();
        if had.is_none() && self.session.token_holder.as_deref() == Some(user) {
            events.push(ArbitrationEvent::ControlGranted { user: user.to_string() });
        }
        Ok((out, events))
    }

    /// Routes a command that did not come from a gesture (sent directly by a
    /// client); it goes through the same arbitration as gesture commands.
    pub fn submit_command(
        &mut self,
        user: &str,
        cmd: RobotCommand,
        now_ms: u64,
    ) -> Result<(RouteOutcome, Vec<ArbitrationEvent>), PipelineError> {
        if !self.session.users.contains(user) {
            return Err(PipelineError::NotJoined(user.to_string()));
        }
        self.session.touch(user, now_ms);
        let (outcome, events) = self.session.route_with_auto_grant(user, cmd, now_ms);
        if let RouteOutcome::Accepted(c) = outcome {
            self.cell.submit(c);
        }
        Ok((outcome, events))
    }

    /// Runs arbitration timeouts and ticks the cell up to `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) -> Vec<ArbitrationEvent> {
        let events = self.session.tick(t_ms);
        while self.cell.state().time_ms < t_ms {
            self.cell.tick();
            if let Some(r) = self.recorder.as_mut() {
                r.observe(&self.cell);
            }
        }
        events
    }

    /// Classifies one frame, steps its user's FSM at the frame timestamp and
    /// routes the resulting commands; accepted ones are latched into the cell.
    /// `now_ms` is the session clock used for arbitration.
    pub fn process_frame(&mut self, frame: &HandFrame, now_ms: u64) -> Result<FrameOutcome, PipelineError> {
        let user = frame.user_id.clone();
        if !self.session.users.contains(&user) {
            return Err(PipelineError::NotJoined(user));
        }
        let prediction = self.classifier.classify(frame);
        let fsm = self
            .fsms
            .entry(user.clone())
            .or_insert_with(|| GestureFsm::new(self.config.fsm.clone()));
        let predictions = BTreeMap::from([(frame.hand, prediction.clone())]);
        let (step, commands) = fsm.step_commands(&predictions, frame.timestamp_ms);
        self.session.touch(&user, now_ms);

        let mut arbitration = Vec::new();
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for (hand, cmd) in commands {
            let record = CommandRecord { ts: frame.timestamp_ms, user: user.clone(), hand, cmd };
            let (outcome, events) = self.session.route_with_auto_grant(&user, cmd, now_ms);
            arbitration.extend(events);
            match outcome {
                RouteOutcome::Accepted(cmd) => {
                    self.cell.submit(cmd);
                    accepted.push(record);
                }
                RouteOutcome::Rejected(reason) => rejected.push((record, reason)),
            }
        }
        Ok(FrameOutcome {
            stable: step.stable[&frame.hand],
            prediction,
            fsm_events: step.events,
            arbitration,
            accepted,
            rejected,
        })
    }

    /// Finishes a run: final ticks plus the closing log line.
    pub fn finish(mut self, until_ms: u64) -> (Cell, Option<StateLog>) {
        self.advance_to(until_ms);
        let log = self.recorder.take().map(|r| r.finish(&self.cell));
        (self.cell, log)
    }
}

/// Runs a trace through a fresh pipeline, joining users on first sight and
/// using frame timestamps as the session clock.
pub fn replay(pipeline: &mut Pipeline, frames: &[HandFrame]) -> Result<Vec<CommandRecord>, PipelineError> {
    let mut out = Vec::new();
    for frame in frames {
        pipeline.advance_to(frame.timestamp_ms);
        if !pipeline.session().users.contains(&frame.user_id) {
            pipeline.join(&frame.user_id, frame.timestamp_ms);
        }
        let outcome = pipeline.process_frame(frame, frame.timestamp_ms)?;
        out.extend(outcome.accepted);
    }
    Ok(out)
}

pub fn encode_commands(records: &[CommandRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("command record serializes"));
        s.push('\n');
    }
    s
}

pub fn decode_commands(text: &str) -> Result<Vec<CommandRecord>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

/// Feeds a recorded command stream to a cell at the recorded times.
pub fn simulate_commands(cell: Cell, records: &[CommandRecord], settle_ms: u64, log_every_ms: u64) -> (Cell, StateLog) {
    let mut cell = cell;
    let mut recorder = StateRecorder::new(&cell, log_every_ms);
    let run = |cell: &mut Cell, t: u64, recorder: &mut StateRecorder| {
        while cell.state().time_ms < t {
            cell.tick();
            recorder.observe(cell);
        }
    };
    for r in records {
        run(&mut cell, r.ts, &mut recorder);
        cell.submit(r.cmd);
    }
    let end = records.last().map_or(0, |r| r.ts) + settle_ms;
    run(&mut cell, end, &mut recorder);
    let log = recorder.finish(&cell);
    (cell, log)
}

/// Runs a trace with state logging; `settle_ms` of extra time follows the last frame.
pub fn simulate_trace(
    pipeline: Pipeline,
    frames: &[HandFrame],
    settle_ms: u64,
    log_every_ms: u64,
) -> Result<(Cell, StateLog), PipelineError> {
    let mut pipeline = pipeline.with_recorder(log_every_ms);
    replay(&mut pipeline, frames)?;
    let end = frames.last().map_or(0, |f| f.timestamp_ms) + settle_ms;
    let (cell, log) = pipeline.finish(end);
    Ok((cell, log.expect("recorder attached")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TactileSummary {
    pub max: f64,
    pub total: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLine {
    pub t: u64,
    pub q: [f64; 6],
    pub tcp: [f64; 3],
    pub gripper: f64,
    pub held: Option<String>,
    pub tactile: TactileSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReleaseSummary {
    pub t: u64,
    pub object: String,
    pub position: [f64; 3],
    /// Object whose footprint (within the grasp radius in the plane) the
    /// release point lies over.
    pub over: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarrySummary {
    pub object: String,
    /// Union of active taxels while held, one string per row, `#` active.
    pub taxels: Vec<String>,
    pub max_pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalLine {
    pub t: u64,
    pub tcp: [f64; 3],
    pub gripper: f64,
    pub objects: BTreeMap<String, [f64; 3]>,
    pub grasped: Vec<String>,
    pub released: Vec<ReleaseSummary>,
    pub carry: Vec<CarrySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum LogLine {
    State(StateLine),
    Event(CellEvent),
    Final { r#final: FinalLine },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateLog {
    pub lines: Vec<LogLine>,
}

impl StateLog {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&serde_json::to_string(l).expect("log line serializes"));
            s.push('\n');
        }
        s
    }

    pub fn final_line(&self) -> Option<&FinalLine> {
        self.lines.iter().rev().find_map(|l| match l {
            LogLine::Final { r#final } => Some(r#final),
            _ => None,
        })
    }
}

/// Renders a taxel mask as rows of `#` and `.`.
pub fn mask_rows(mask: &Footprint) -> Vec<String> {
    mask.iter().map(|row| row.iter().map(|&b| if b { '#' } else { '.' }).collect()).collect()
}

/// The expected footprint rows of an object kind.
pub fn footprint_rows(kind: ObjectKind) -> Vec<String> {
    mask_rows(&footprint(kind))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateRecorder {
    log_every_ms: u64,
    next_log_ms: u64,
    seen_events: usize,
    lines: Vec<LogLine>,
    carry: BTreeMap<String, (Footprint, f64)>,
}

impl StateRecorder {
    pub fn new(cell: &Cell, log_every_ms: u64) -> Self {
        let mut r = Self {
            log_every_ms: log_every_ms.max(1),
            next_log_ms: cell.state().time_ms,
            seen_events: cell.events().len(),
            lines: Vec::new(),
            carry: BTreeMap::new(),
        };
        r.observe(cell);
        r
    }

    fn state_line(cell: &Cell) -> StateLine {
        let s = cell.state();
        let frame = cell.tactile_frame(s.time_ms as f64);
        StateLine {
            t: s.time_ms,
            q: s.q,
            tcp: s.tcp.position_array(),
            gripper: s.gripper_opening,
            held: cell.held_object().map(|o| o.name.clone()),
            tactile: TactileSummary { max: frame.max(), total: frame.total(), cells: frame.active_cells() },
        }
    }

    /// Call after every cell tick.
    pub fn observe(&mut self, cell: &Cell) {
        for e in &cell.events()[self.seen_events..] {
            self.lines.push(LogLine::Event(e.clone()));
        }
        self.seen_events = cell.events().len();
        if let Some(obj) = cell.held_object() {
            let frame = cell.tactile_frame(cell.state().time_ms as f64);
            let entry = self.carry.entry(obj.name.clone()).or_insert(([[false; GRID]; GRID], 0.0));
            for r in 0..GRID {
                for c in 0..GRID {
                    entry.0[r][c] |= frame.pressures[r][c] > 0.0;
                }
            }
            entry.1 = entry.1.max(frame.max());
        }
        if cell.state().time_ms >= self.next_log_ms {
            self.lines.push(LogLine::State(Self::state_line(cell)));
            self.next_log_ms = cell.state().time_ms + self.log_every_ms;
        }
    }

    pub fn finish(mut self, cell: &Cell) -> StateLog {
        let s = cell.state();
        let radius = cell.config().grasp_radius;
        let mut grasped = Vec::new();
        let mut released = Vec::new();
        for e in cell.events() {
            match e {
                CellEvent::Grasped { object, .. } => grasped.push(object.clone()),
                CellEvent::Released { t, object, position } => {
                    let over = cell
                        .objects()
                        .iter()
                        .filter(|o| &o.name != object)
                        .find(|o| {
                            let dx = o.position[0] - position[0];
                            let dy = o.position[1] - position[1];
                            (dx * dx + dy * dy).sqrt() <= radius
                        })
                        .map(|o| o.name.clone());
                    released.push(ReleaseSummary { t: *t, object: object.clone(), position: *position, over });
                }
            }
        }
        let final_line = FinalLine {
            t: s.time_ms,
            tcp: s.tcp.position_array(),
            gripper: s.gripper_opening,
            objects: cell.objects().iter().map(|o| (o.name.clone(), o.position)).collect(),
            grasped,
            released,
            carry: self
                .carry
                .iter()
                .map(|(name, (mask, max))| CarrySummary {
                    object: name.clone(),
                    taxels: mask_rows(mask),
                    max_pressure: *max,
                })
                .collect(),
        };
        self.lines.push(LogLine::Final { r#final: final_line });
        StateLog { lines: self.lines }
    }
}

/// Image-plane waypoints of the bundled demonstration.
pub const PIPETTE_UV: (f64, f64) = (0.3, 0.6);
pub const TUBE_UV: (f64, f64) = (0.7, 0.5);
const START_UV: (f64, f64) = (0.5, 0.5);
const LEFT_HAND_UV: (f64, f64) = (0.2, 0.7);
const FRAME_MS: u64 = 33;
const SCRIPT_NOISE: f64 = 0.02;

/// The bundled pipette scene: the pipette on the bench under the first
/// waypoint and a tube rack below the second. The tube sits lower than the
/// carry height, so the gripper passes over it without touching.
pub fn pipette_scene_toml(fsm: &FsmConfig) -> String {
    let (px, py) = fsm.workspace.map(PIPETTE_UV.0, PIPETTE_UV.1);
    let (tx, ty) = fsm.workspace.map(TUBE_UV.0, TUBE_UV.1);
    let z = fsm.z_fixed;
    format!(
        "[[object]]\nname = \"pipette\"\nkind = \"pipette\"\nposition = [{px:.3}, {py:.3}, {z:.3}]\n\n\
         [[object]]\nname = \"tube\"\nkind = \"tube\"\nposition = [{tx:.3}, {ty:.3}, {:.3}]\n",
        z - 0.08
    )
}

struct Script {
    frames: Vec<HandFrame>,
    t: u64,
    seed: u64,
}

impl Script {
    fn new(seed: u64) -> Self {
        Self { frames: Vec::new(), t: 0, seed }
    }

    fn push(&mut self, hands: &[(Hand, GestureClass, (f64, f64))]) {
        for &(hand, class, (u, v)) in hands {
            self.seed += 1;
            let mut f = scripted_frame(class, hand, u, v, self.seed, SCRIPT_NOISE);
            f.timestamp_ms = self.t;
            self.frames.push(f);
        }
        self.t += FRAME_MS;
    }

    fn hold(&mut self, n: usize, hands: &[(Hand, GestureClass, (f64, f64))]) {
        for _ in 0..n {
            self.push(hands);
        }
    }

    fn sweep(&mut self, n: usize, hand: Hand, class: GestureClass, from: (f64, f64), to: (f64, f64)) {
        for i in 1..=n {
            let a = i as f64 / n as f64;
            let p = (from.0 + a * (to.0 - from.0), from.1 + a * (to.1 - from.1));
            self.push(&[(hand, class, p)]);
        }
    }
}

/// Pick the pipette up and put it into the tube: the right hand steers with
/// Move and closes with Grab; at the tube the left hand makes a fist and the
/// right hand's thumb-index spread opens the gripper.
pub fn pipette_demo_trace(seed: u64) -> Vec<HandFrame> {
    use GestureClass::{Grab, Move};
    let r = Hand::Right;
    let mut s = Script::new(seed);
    s.sweep(45, r, Move, START_UV, PIPETTE_UV);
    s.hold(90, &[(r, Move, PIPETTE_UV)]);
    s.hold(45, &[(r, Grab, PIPETTE_UV)]);
    s.sweep(60, r, Move, PIPETTE_UV, TUBE_UV);
    s.hold(60, &[(r, Move, TUBE_UV)]);
    s.hold(45, &[(Hand::Left, Grab, LEFT_HAND_UV), (r, Move, TUBE_UV)]);
    s.frames
}

/// A single right hand holding a fist for two seconds.
pub fn grab_trace(seed: u64) -> Vec<HandFrame> {
    let mut s = Script::new(seed);
    s.hold(60, &[(Hand::Right, GestureClass::Grab, (0.5, 0.6))]);
    s.frames
}
