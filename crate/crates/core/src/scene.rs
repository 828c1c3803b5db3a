//! Tabletop scene objects and the simulated robot cell that ties the arm,
//! gripper, grasping and tactile rendering to one fixed-step clock.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::RobotCommand;
use crate::robot::{apply_command, RobotState, SimConfig};
use crate::tactile::{render_frame, safety_clamp, ContactModel, TactileClock, TactileFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Pipette,
    Tube,
}

impl ObjectKind {
    /// Default grasp width in meters.
    pub fn default_width(self) -> f64 {
        match self {
            ObjectKind::Pipette => 0.010,
            ObjectKind::Tube => 0.030,
        }
    }

    pub fn default_pressure_limit(self) -> f64 {
        match self {
            ObjectKind::Pipette => 100.0,
            ObjectKind::Tube => 400.0,
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectKind::Pipette => "pipette",
            ObjectKind::Tube => "tube",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub kind: ObjectKind,
    pub width: f64,
    pub position: [f64; 3],
    /// Max tactile counts before the gripper may not close further.
    pub fragile_pressure_limit: f64,
}

impl SceneObject {
    pub fn new(name: &str, kind: ObjectKind, position: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            kind,
            width: kind.default_width(),
            position,
            fragile_pressure_limit: kind.default_pressure_limit(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default, rename = "object")]
    objects: Vec<ObjectEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    name: String,
    kind: ObjectKind,
    position: [f64; 3],
    width: Option<f64>,
    fragile_pressure_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Parses a scene file: TOML with one `[[object]]` table per object.
    pub fn parse(text: &str, grip_max: f64) -> Result<Scene, SceneError> {
        let file: SceneFile = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        let mut objects = Vec::new();
        for e in file.objects {
            let mut obj = SceneObject::new(&e.name, e.kind, e.position);
            if let Some(w) = e.width {
                obj.width = w;
            }
            if let Some(l) = e.fragile_pressure_limit {
                obj.fragile_pressure_limit = l;
            }
            if !(obj.width > 0.0 && obj.width < grip_max) {
                return Err(SceneError::Invalid(format!("{}: width {} not in (0, {grip_max})", obj.name, obj.width)));
            }
            if !(obj.fragile_pressure_limit > 0.0) {
                return Err(SceneError::Invalid(format!("{}: pressure limit must be positive", obj.name)));
            }
            if objects.iter().any(|o: &SceneObject| o.name == obj.name) {
                return Err(SceneError::Invalid(format!("duplicate object name {}", obj.name)));
            }
            objects.push(obj);
        }
        Ok(Scene { objects })
    }

    pub fn find(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    pub sim: SimConfig,
    pub contact: ContactModel,
    pub tick_ms: u64,
    /// Horizontal distance from the TCP within which an object is between the fingers.
    pub grasp_radius: f64,
    pub grasp_height: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            contact: ContactModel::default(),
            tick_ms: 10,
            grasp_radius: 0.02,
            grasp_height: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CellEvent {
    Grasped { t: u64, object: String },
    Released { t: u64, object: String, position: [f64; 3] },
}

/// The simulated cell. Commands are latched per channel (arm, gripper) and
/// applied on every tick until replaced; the last command submitted before a
/// tick wins.
#[derive(Debug, Clone)]
pub struct Cell {
    config: CellConfig,
    state: RobotState,
    objects: Vec<SceneObject>,
    latched_arm: Option<RobotCommand>,
    latched_gripper: Option<RobotCommand>,
    held: Option<(usize, Vector3<f64>)>,
    events: Vec<CellEvent>,
}

impl Cell {
    pub fn new(config: CellConfig, scene: Scene) -> Self {
        let state = RobotState::at_home(&config.sim);
        Self { config, state, objects: scene.objects, latched_arm: None, latched_gripper: None, held: None, events: Vec::new() }
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn events(&self) -> &[CellEvent] {
        &self.events
    }

    pub fn held_object(&self) -> Option<&SceneObject> {
        self.held.map(|(i, _)| &self.objects[i])
    }

    pub fn submit(&mut self, cmd: RobotCommand) {
        match cmd {
            RobotCommand::MoveTcp { .. } | RobotCommand::SetYaw { .. } => self.latched_arm = Some(cmd),
            RobotCommand::GripperSet { .. } => self.latched_gripper = Some(cmd),
            RobotCommand::Hold => {}
        }
    }

    fn in_zone(&self, obj: &SceneObject) -> bool {
        let p = self.state.tcp.position;
        let dx = p.x - obj.position[0];
        let dy = p.y - obj.position[1];
        (dx * dx + dy * dy).sqrt() <= self.config.grasp_radius
            && (p.z - obj.position[2]).abs() <= self.config.grasp_height
    }

    /// Object between the fingers: the held one, else the nearest in reach.
    pub fn contact_object(&self) -> Option<&SceneObject> {
        if let Some((i, _)) = self.held {
            return Some(&self.objects[i]);
        }
        let p = self.state.tcp.position;
        self.objects
            .iter()
            .filter(|o| self.in_zone(o))
            .min_by(|a, b| {
                let da = (Vector3::from(a.position) - p).norm();
                let db = (Vector3::from(b.position) - p).norm();
                da.total_cmp(&db)
            })
    }

    pub fn tactile_frame(&self, now_ms: f64) -> TactileFrame {
        render_frame(&self.config.contact, self.state.gripper_opening, self.contact_object(), now_ms)
    }

    /// Latched gripper command after the fragile-object clamp.
    fn gripper_command(&self) -> RobotCommand {
        let Some(cmd) = self.latched_gripper else { return RobotCommand::Hold };
        match self.contact_object() {
            Some(obj) => {
                let frame = self.tactile_frame(self.state.time_ms as f64);
                safety_clamp(&frame, obj.fragile_pressure_limit, cmd, self.state.gripper_opening)
            }
            None => cmd,
        }
    }

    pub fn tick(&mut self) {
        let dt = self.config.tick_ms;
        let gripper_cmd = self.gripper_command();
        let arm_cmd = self.latched_arm.unwrap_or(RobotCommand::Hold);
        let mut next = apply_command(&self.config.sim, &self.state, &arm_cmd, dt);
        next = apply_command(&self.config.sim, &next, &gripper_cmd, dt);
        next.time_ms = self.state.time_ms + dt;
        self.state = next;
        self.update_grasp();
    }

    fn update_grasp(&mut self) {
        let tcp = self.state.tcp.position;
        let opening = self.state.gripper_opening;
        let t = self.state.time_ms;
        if let Some((i, offset)) = self.held {
            let p = tcp + offset;
            self.objects[i].position = [p.x, p.y, p.z];
            if opening >= self.objects[i].width {
                self.held = None;
                self.events.push(CellEvent::Released {
                    t,
                    object: self.objects[i].name.clone(),
                    position: self.objects[i].position,
                });
            }
            return;
        }
        let candidate = self
            .contact_object()
            .filter(|o| opening < o.width)
            .map(|o| o.name.clone());
        if let Some(name) = candidate {
            let i = self.objects.iter().position(|o| o.name == name).expect("object exists");
            let offset = Vector3::from(self.objects[i].position) - tcp;
            self.held = Some((i, offset));
            self.events.push(CellEvent::Grasped { t, object: name });
        }
    }

    /// Ticks until the cell clock reaches at least `t_ms`.
    pub fn run_until(&mut self, t_ms: u64) {
        while self.state.time_ms < t_ms {
            self.tick();
        }
    }

    /// Advances the cell by `duration_ms` and returns the tactile frames of
    /// that span, one per 120 Hz sample time, each rendered from the state
    /// of the latest tick at or before it.
    pub fn tactile_clock(&mut self, duration_ms: u64, rate_hz: u64) -> Vec<TactileFrame> {
        let start = self.state.time_ms;
        let mut clock = TactileClock::new(rate_hz);
        let mut frames = Vec::new();
        let end = start + duration_ms;
        loop {
            let elapsed = (self.state.time_ms - start) as f64;
            let next_tick = elapsed + self.config.tick_ms as f64;
            let span_end = next_tick.min(duration_ms as f64);
            for t in clock.due(span_end) {
                frames.push(self.tactile_frame(start as f64 + t));
            }
            if self.state.time_ms >= end {
                break;
            }
            self.tick();
        }
        frames
    }
}
