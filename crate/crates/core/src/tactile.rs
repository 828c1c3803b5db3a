//! 10×10 gripper tactile array: footprint contact model, fragile-object
//! safety clamp and the 120 Hz frame schedule.

use serde::{Deserialize, Serialize};

use crate::gesture::RobotCommand;
use crate::scene::{ObjectKind, SceneObject};

pub const GRID: usize = 10;
pub const FRAME_AREA_CM2: f64 = 5.8;
pub const TACTILE_RATE_HZ: u64 = 120;
pub const DEFAULT_STIFFNESS: f64 = 5e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    /// Sensor counts, row-major.
    pub pressures: [[f64; GRID]; GRID],
    pub timestamp_ms: f64,
}

impl TactileFrame {
    pub fn zeros(timestamp_ms: f64) -> Self {
        Self { pressures: [[0.0; GRID]; GRID], timestamp_ms }
    }

    pub fn frame_area_cm2(&self) -> f64 {
        FRAME_AREA_CM2
    }

    pub fn max(&self) -> f64 {
        self.pressures.iter().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.pressures.iter().flatten().sum()
    }

    pub fn active_cells(&self) -> usize {
        self.pressures.iter().flatten().filter(|p| **p > 0.0).count()
    }
}

pub type Footprint = [[bool; GRID]; GRID];

/// Contact mask of an object on the array: a narrow two-column band for
/// the pipette, an 8×8 block for the tube.
pub fn footprint(kind: ObjectKind) -> Footprint {
    let mut mask = [[false; GRID]; GRID];
    for (r, row) in mask.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = match kind {
                ObjectKind::Pipette => (5..=6).contains(&c),
                ObjectKind::Tube => (1..=8).contains(&r) && (1..=8).contains(&c),
            };
        }
    }
    mask
}

pub fn footprint_size(mask: &Footprint) -> usize {
    mask.iter().flatten().filter(|b| **b).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    /// Counts per meter of over-closure.
    pub stiffness_k: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self { stiffness_k: DEFAULT_STIFFNESS }
    }
}

/// Uniform pressure `k · (width - opening)` over the object's footprint
/// when the gripper closes past the object width, zeros otherwise.
pub fn render_frame(model: &ContactModel, opening: f64, object: Option<&SceneObject>, now_ms: f64) -> TactileFrame {
    let mut frame = TactileFrame::zeros(now_ms);
    let Some(obj) = object else { return frame };
    if opening >= obj.width {
        return frame;
    }
    let value = model.stiffness_k * (obj.width - opening);
    let mask = footprint(obj.kind);
    for r in 0..GRID {
        for c in 0..GRID {
            if mask[r][c] {
                frame.pressures[r][c] = value;
            }
        }
    }
    frame
}

/// Blocks further closing once any cell exceeds `limit`; every other
/// command passes unchanged.
pub fn safety_clamp(frame: &TactileFrame, limit: f64, cmd: RobotCommand, current_opening: f64) -> RobotCommand {
    match cmd {
        RobotCommand::GripperSet { opening } if frame.max() > limit && opening < current_opening => {
            RobotCommand::GripperSet { opening: current_opening }
        }
        other => other,
    }
}

/// Frame times `k · 1000 / rate` ms, computed from the index each time so
/// no error accumulates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TactileClock {
    rate_hz: u64,
    next_index: u64,
}

impl TactileClock {
    pub fn new(rate_hz: u64) -> Self {
        assert!(rate_hz > 0, "rate must be positive");
        Self { rate_hz, next_index: 0 }
    }

    pub fn time_of(&self, index: u64) -> f64 {
        (index * 1000) as f64 / self.rate_hz as f64
    }

    pub fn next_time(&self) -> f64 {
        self.time_of(self.next_index)
    }

    /// Frame times strictly before `until_ms` that have not been emitted yet.
    pub fn due(&mut self, until_ms: f64) -> Vec<f64> {
        let mut out = Vec::new();
        while self.next_time() < until_ms {
            out.push(self.next_time());
            self.next_index += 1;
        }
        out
    }
}

/// Frame timestamps covering `[0, duration_ms)`.
pub fn frame_schedule(rate_hz: u64, duration_ms: f64) -> Vec<f64> {
    TactileClock::new(rate_hz).due(duration_ms)
}
