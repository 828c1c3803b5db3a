//! Gesture classes, per-hand debouncing with the two-hand FingerDistance
//! composite, and the mapping from stable gestures to robot commands.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::features::{normalized_points, FeatureError};
use crate::landmark::{Hand, HandFrame, INDEX_TIP, MIDDLE_MCP, THUMB_TIP, WRIST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GestureClass {
    Move,
    Angle,
    Grab,
    NoGesture,
    /// Composite two-hand gesture; never produced by the classifier.
    FingerDistance,
}

impl GestureClass {
    /// Classifier output order.
    pub const TRAINABLE: [GestureClass; 4] =
        [GestureClass::Move, GestureClass::Angle, GestureClass::Grab, GestureClass::NoGesture];

    pub fn is_trainable(self) -> bool {
        self != GestureClass::FingerDistance
    }

    pub fn index(self) -> usize {
        match self {
            GestureClass::Move => 0,
            GestureClass::Angle => 1,
            GestureClass::Grab => 2,
            GestureClass::NoGesture => 3,
            GestureClass::FingerDistance => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<GestureClass> {
        Self::TRAINABLE.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Move => "Move",
            GestureClass::Angle => "Angle",
            GestureClass::Grab => "Grab",
            GestureClass::NoGesture => "NoGesture",
            GestureClass::FingerDistance => "FingerDistance",
        }
    }

    pub fn parse(s: &str) -> Option<GestureClass> {
        [
            GestureClass::Move,
            GestureClass::Angle,
            GestureClass::Grab,
            GestureClass::NoGesture,
            GestureClass::FingerDistance,
        ]
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The gesture a hand is effectively making after the composite rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gesture {
    Move,
    Angle,
    Grab,
    NoGesture,
    FingerDistance(f64),
}

impl Gesture {
    pub fn from_class(c: GestureClass) -> Gesture {
        match c {
            GestureClass::Move => Gesture::Move,
            GestureClass::Angle => Gesture::Angle,
            GestureClass::Grab => Gesture::Grab,
            GestureClass::NoGesture | GestureClass::FingerDistance => Gesture::NoGesture,
        }
    }

    pub fn class(self) -> GestureClass {
        match self {
            Gesture::Move => GestureClass::Move,
            Gesture::Angle => GestureClass::Angle,
            Gesture::Grab => GestureClass::Grab,
            Gesture::NoGesture => GestureClass::NoGesture,
            Gesture::FingerDistance(_) => GestureClass::FingerDistance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotCommand {
    MoveTcp { x: f64, y: f64, z: f64 },
    SetYaw { yaw: f64 },
    GripperSet { opening: f64 },
    Hold,
}

/// Axis-aligned rectangle the image plane maps onto, in robot base meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Workspace {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    /// Image point to robot plane: u grows along x, v is flipped onto y.
    pub fn map(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.x_min + u * (self.x_max - self.x_min),
            self.y_max - v * (self.y_max - self.y_min),
        )
    }

    /// Inverse of [`Workspace::map`].
    pub fn unmap(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.x_min) / (self.x_max - self.x_min), (self.y_max - y) / (self.y_max - self.y_min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmConfig {
    pub debounce_n: u32,
    pub min_confidence: f64,
    pub absence_timeout_ms: u64,
    pub ema_alpha: f64,
    pub workspace: Workspace,
    pub z_fixed: f64,
    pub yaw_gain: f64,
    pub grip_min: f64,
    pub grip_max: f64,
    pub fingerdistance_span: f64,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            debounce_n: 5,
            min_confidence: 0.6,
            absence_timeout_ms: 700,
            ema_alpha: 0.35,
            workspace: Workspace { x_min: -0.95, x_max: -0.45, y_min: -0.45, y_max: 0.15 },
            z_fixed: 0.25,
            yaw_gain: 1.0,
            grip_min: 0.0,
            grip_max: 0.085,
            fingerdistance_span: 1.0,
        }
    }
}

impl FsmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.debounce_n < 1 {
            return Err("debounce_n must be at least 1".into());
        }
        if !(self.grip_min < self.grip_max) {
            return Err("grip_min must be below grip_max".into());
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err("ema_alpha must be in (0, 1]".into());
        }
        if !(self.fingerdistance_span > 0.0) {
            return Err("fingerdistance_span must be positive".into());
        }
        let w = &self.workspace;
        if !(w.x_min < w.x_max && w.y_min < w.y_max) {
            return Err("workspace bounds must be ordered".into());
        }
        Ok(())
    }
}

/// Classifier output for one hand in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: GestureClass,
    pub proba: [f64; 4],
    pub frame: HandFrame,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.proba[self.class.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmEvent {
    StableChanged { hand: Hand, from: GestureClass, to: GestureClass },
    FingerDistance { hand: Hand, distance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct HandTrack {
    stable: GestureClass,
    streak: Option<(GestureClass, u32)>,
    last_seen_ms: Option<u64>,
}

impl HandTrack {
    fn new() -> Self {
        Self { stable: GestureClass::NoGesture, streak: None, last_seen_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub stable: BTreeMap<Hand, GestureClass>,
    pub events: Vec<FsmEvent>,
    /// Effective gesture of each hand that was present in this step.
    pub effective: Vec<(Hand, Gesture)>,
}

/// Debouncing state machine for the two hands of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureFsm {
    config: FsmConfig,
    left: HandTrack,
    right: HandTrack,
    prev_target: Option<(f64, f64)>,
}

fn hand_slot(hand: Hand) -> usize {
    match hand {
        Hand::Left => 0,
        Hand::Right => 1,
    }
}

impl GestureFsm {
    pub fn new(config: FsmConfig) -> Self {
        Self { config, left: HandTrack::new(), right: HandTrack::new(), prev_target: None }
    }

    pub fn config(&self) -> &FsmConfig {
        &self.config
    }

    pub fn stable(&self, hand: Hand) -> GestureClass {
        self.track(hand).stable
    }

    pub fn prev_target(&self) -> Option<(f64, f64)> {
        self.prev_target
    }

    fn track(&self, hand: Hand) -> &HandTrack {
        match hand_slot(hand) {
            0 => &self.left,
            _ => &self.right,
        }
    }

    fn track_mut(&mut self, hand: Hand) -> &mut HandTrack {
        match hand_slot(hand) {
            0 => &mut self.left,
            _ => &mut self.right,
        }
    }

    /// Advances both hands by one observation step.
    pub fn step(&mut self, predictions: &BTreeMap<Hand, Prediction>, now_ms: u64) -> StepOutput {
        let mut events = Vec::new();
        let n = self.config.debounce_n;
        let min_conf = self.config.min_confidence;
        let timeout = self.config.absence_timeout_ms;
        for hand in [Hand::Left, Hand::Right] {
            let track = self.track_mut(hand);
            match predictions.get(&hand) {
                Some(pred) => {
                    track.last_seen_ms = Some(now_ms);
                    let confident = pred.class.is_trainable() && pred.confidence() >= min_conf;
                    if !confident || pred.class == track.stable {
                        track.streak = None;
                        continue;
                    }
                    let count = match track.streak {
                        Some((c, k)) if c == pred.class => k + 1,
                        _ => 1,
                    };
                    if count >= n {
                        let from = track.stable;
                        track.stable = pred.class;
                        track.streak = None;
                        events.push(FsmEvent::StableChanged { hand, from, to: pred.class });
                    } else {
                        track.streak = Some((pred.class, count));
                    }
                }
                None => {
                    let absent = track.last_seen_ms.is_some_and(|t| now_ms.saturating_sub(t) > timeout);
                    if absent && track.stable != GestureClass::NoGesture {
                        let from = track.stable;
                        track.stable = GestureClass::NoGesture;
                        track.streak = None;
                        events.push(FsmEvent::StableChanged { hand, from, to: GestureClass::NoGesture });
                    } else if absent {
                        track.streak = None;
                    }
                }
            }
        }

        let mut effective = Vec::new();
        for (hand, pred) in predictions {
            let own = self.stable(*hand);
            let other = self.stable(hand.other());
            let gesture = if other == GestureClass::Grab && own != GestureClass::Grab {
                match thumb_index_distance(&pred.frame) {
                    Ok(d) => {
                        events.push(FsmEvent::FingerDistance { hand: *hand, distance: d });
                        Gesture::FingerDistance(d)
                    }
                    Err(_) => Gesture::NoGesture,
                }
            } else if own == GestureClass::Grab
                && other != GestureClass::Grab
                && self.other_hand_live(*hand, now_ms)
            {
                // the grab hand is only the modifier for the other hand
                Gesture::NoGesture
            } else {
                Gesture::from_class(own)
            };
            effective.push((*hand, gesture));
        }

        let stable = [Hand::Left, Hand::Right].into_iter().map(|h| (h, self.stable(h))).collect();
        StepOutput { stable, events, effective }
    }

    fn other_hand_live(&self, hand: Hand, now_ms: u64) -> bool {
        let other = self.track(hand.other());
        other.last_seen_ms.is_some_and(|t| now_ms.saturating_sub(t) <= self.config.absence_timeout_ms)
    }

    /// Maps a gesture to a command and remembers the last Move target for smoothing.
    pub fn command_for(&mut self, gesture: Gesture, frame: &HandFrame) -> RobotCommand {
        let cmd = map_to_command(gesture, frame, &self.config, self.prev_target);
        if let RobotCommand::MoveTcp { x, y, .. } = cmd {
            self.prev_target = Some((x, y));
        }
        cmd
    }

    /// [`GestureFsm::step`] followed by the command of every present hand;
    /// `Hold` is dropped since it means no new command.
    pub fn step_commands(
        &mut self,
        predictions: &BTreeMap<Hand, Prediction>,
        now_ms: u64,
    ) -> (StepOutput, Vec<(Hand, RobotCommand)>) {
        let out = self.step(predictions, now_ms);
        let mut commands = Vec::new();
        for (hand, gesture) in &out.effective {
            let frame = &predictions[hand].frame;
            let cmd = self.command_for(*gesture, frame);
            if cmd != RobotCommand::Hold {
                commands.push((*hand, cmd));
            }
        }
        (out, commands)
    }
}

/// Thumb tip to index tip distance in normalized hand units.
pub fn thumb_index_distance(frame: &HandFrame) -> Result<f64, FeatureError> {
    let pts = normalized_points(frame)?;
    let (a, b) = (pts[THUMB_TIP], pts[INDEX_TIP]);
    Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
}

/// In-plane angle of the wrist to middle knuckle vector, measured from image up;
/// positive when the hand leans toward +u.
pub fn hand_roll(frame: &HandFrame) -> f64 {
    let w = frame.landmarks[WRIST];
    let m = frame.landmarks[MIDDLE_MCP];
    (m.x - w.x).atan2(-(m.y - w.y))
}

pub fn map_to_command(
    gesture: Gesture,
    frame: &HandFrame,
    config: &FsmConfig,
    prev_target: Option<(f64, f64)>,
) -> RobotCommand {
    match gesture {
        Gesture::Move => {
            let w = frame.landmarks[WRIST];
            let (raw_x, raw_y) = config.workspace.map(w.x, w.y);
            let (x, y) = match prev_target {
                Some((px, py)) => {
                    let a = config.ema_alpha;
                    (a * raw_x + (1.0 - a) * px, a * raw_y + (1.0 - a) * py)
                }
                None => (raw_x, raw_y),
            };
            let ws = &config.workspace;
            RobotCommand::MoveTcp {
                x: x.clamp(ws.x_min, ws.x_max),
                y: y.clamp(ws.y_min, ws.y_max),
                z: config.z_fixed,
            }
        }
        Gesture::Angle => RobotCommand::SetYaw { yaw: config.yaw_gain * hand_roll(frame) },
        Gesture::Grab => RobotCommand::GripperSet { opening: config.grip_min },
        Gesture::FingerDistance(d) => {
            let t = (d / config.fingerdistance_span).clamp(0.0, 1.0);
            RobotCommand::GripperSet { opening: config.grip_min + t * (config.grip_max - config.grip_min) }
        }
        Gesture::NoGesture => RobotCommand::Hold,
    }
}
