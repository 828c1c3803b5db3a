//! Serial-arm kinematics (standard DH), geometric Jacobian, damped
//! least-squares IK and the rate-limited arm/gripper simulator step.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::RobotCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub const fn new(a: f64, d: f64, alpha: f64) -> Self {
        Self { a, d, alpha, theta_offset: 0.0 }
    }

    /// `Rz(θ) · Tz(d) · Tx(a) · Rx(α)`
    pub fn transform(&self, q: f64) -> Isometry3<f64> {
        let theta = q + self.theta_offset;
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let t = Vector3::new(self.a * theta.cos(), self.a * theta.sin(), self.d);
        Isometry3::from_parts(Translation3::from(t), rz * rx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub rows: Vec<DhRow>,
    pub joint_limits: Vec<(f64, f64)>,
    /// rad/s
    pub max_joint_speed: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target unreachable after {iterations} iterations (position error {position_error:.3e} m, rotation error {rotation_error:.3e} rad)")]
    Unreachable {
        iterations: usize,
        position_error: f64,
        rotation_error: f64,
        /// Last iterate, for diagnostics; callers keep their previous target.
        q: Vec<f64>,
    },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

/// Joint configuration with the tool pointing straight down.
pub const HOME_Q: [f64; 6] = [0.0, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, 0.0];

impl KinematicChain {
    /// Six-joint elbow manipulator with UR10-like link lengths.
    pub fn default_arm() -> Self {
        let two_pi = 2.0 * PI;
        Self {
            rows: vec![
                DhRow::new(0.0, 0.128, FRAC_PI_2),
                DhRow::new(-0.612, 0.0, 0.0),
                DhRow::new(-0.572, 0.0, 0.0),
                DhRow::new(0.0, 0.164, FRAC_PI_2),
                DhRow::new(0.0, 0.116, -FRAC_PI_2),
                DhRow::new(0.0, 0.092, 0.0),
            ],
            joint_limits: vec![
                (-two_pi, two_pi),
                (-two_pi, two_pi),
                (-PI, PI),
                (-two_pi, two_pi),
                (-two_pi, two_pi),
                (-two_pi, two_pi),
            ],
            max_joint_speed: 1.0,
        }
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.rows.len() != self.joint_limits.len() {
            return Err(KinematicsError::InvalidChain("one limit pair per joint".into()));
        }
        for r in &self.rows {
            if ![r.a, r.d, r.alpha, r.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidChain("non-finite DH parameter".into()));
            }
        }
        if self.joint_limits.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(KinematicsError::InvalidChain("joint limits must satisfy lo < hi".into()));
        }
        if !(self.max_joint_speed > 0.0) {
            return Err(KinematicsError::InvalidChain("max_joint_speed must be positive".into()));
        }
        Ok(())
    }

    fn check(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, (lo, hi)) in q.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter().zip(&self.joint_limits).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Base frame followed by the frame after each joint.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Isometry3<f64>>, KinematicsError> {
        self.check(q)?;
        let mut out = Vec::with_capacity(self.dof() + 1);
        let mut t = Isometry3::identity();
        out.push(t);
        for (row, qi) in self.rows.iter().zip(q) {
            t *= row.transform(*qi);
            out.push(t);
        }
        Ok(out)
    }
}

/// Position plus unit quaternion kept in the `w ≥ 0` hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        let q = UnitQuaternion::new_normalize(orientation.into_inner());
        let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
        Self { position, orientation: q }
    }

    /// `[w, x, y, z]`
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn position_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.position.z]
    }
}

pub fn fk(chain: &KinematicChain, q: &[f64]) -> Result<Pose, KinematicsError> {
    let frames = chain.frames(q)?;
    let end = frames.last().expect("base frame present");
    Ok(Pose::new(end.translation.vector, end.rotation))
}

/// 6×n geometric Jacobian: column i is `(z_{i-1} × (p_end - p_{i-1}); z_{i-1})`.
pub fn jacobian(chain: &KinematicChain, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
    let frames = chain.frames(q)?;
    let p_end = frames.last().expect("base frame present").translation.vector;
    let mut j = DMatrix::zeros(6, chain.dof());
    for i in 0..chain.dof() {
        let f = &frames[i];
        let z = f.rotation * Vector3::z();
        let lin = z.cross(&(p_end - f.translation.vector));
        for r in 0..3 {
            j[(r, i)] = lin[r];
            j[(r + 3, i)] = z[r];
        }
    }
    Ok(j)
}

/// Rotation vector taking `current` to `target`, in the base frame,
/// with angle in `[0, π]`.
pub fn orientation_error(target: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vector3<f64> {
    (target * current.inverse()).scaled_axis()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub max_iters: usize,
    pub lambda: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { tol_pos: 1e-4, tol_rot: 1e-3, max_iters: 200, lambda: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
}

/// Damped least squares: `Δq = Jᵀ(JJᵀ + λ²I)⁻¹ e`, clamping to the joint
/// limits after every step.
pub fn ik(chain: &KinematicChain, target: &Pose, q0: &[f64], opts: &IkOptions) -> Result<IkSolution, KinematicsError> {
    chain.check(q0)?;
    let mut q = q0.to_vec();
    chain.clamp(&mut q);
    let lambda2 = opts.lambda * opts.lambda;
    let mut iterations = 0;
    loop {
        let pose = fk(chain, &q)?;
        let ep = target.position - pose.position;
        let er = orientation_error(&target.orientation, &pose.orientation);
        if ep.norm() < opts.tol_pos && er.norm() < opts.tol_rot {
            return Ok(IkSolution { q, iterations });
        }
        if iterations == opts.max_iters {
            return Err(KinematicsError::Unreachable {
                iterations,
                position_error: ep.norm(),
                rotation_error: er.norm(),
                q,
            });
        }
        let j = jacobian(chain, &q)?;
        let e = DVector::from_iterator(6, ep.iter().chain(er.iter()).cloned());
        let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * lambda2;
        let Some(y) = jjt.lu().solve(&e) else {
            return Err(KinematicsError::Unreachable {
                iterations,
                position_error: ep.norm(),
                rotation_error: er.norm(),
                q,
            });
        };
        let dq = j.transpose() * y;
        for (qi, d) in q.iter_mut().zip(dq.iter()) {
            *qi += d;
        }
        chain.clamp(&mut q);
        iterations += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub chain: KinematicChain,
    pub ik: IkOptions,
    /// m/s
    pub gripper_speed: f64,
    pub grip_min: f64,
    pub grip_max: f64,
    /// Tool orientation at yaw 0 (pointing down, as at [`HOME_Q`]).
    pub tool_down: UnitQuaternion<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let chain = KinematicChain::default_arm();
        let tool_down = fk(&chain, &HOME_Q).expect("home pose").orientation;
        Self { chain, ik: IkOptions::default(), gripper_speed: 0.1, grip_min: 0.0, grip_max: 0.085, tool_down }
    }
}

impl SimConfig {
    pub fn tool_orientation(&self, yaw: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * self.tool_down
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: [f64; 6],
    pub gripper_opening: f64,
    pub tcp: Pose,
    pub time_ms: u64,
    pub ik_unreachable: bool,
    /// Last reachable commanded TCP position and yaw.
    pub commanded_position: Vector3<f64>,
    pub commanded_yaw: f64,
}

impl RobotState {
    pub fn at_home(config: &SimConfig) -> Self {
        let tcp = fk(&config.chain, &HOME_Q).expect("home pose");
        Self {
            q: HOME_Q,
            gripper_opening: config.grip_max,
            tcp,
            time_ms: 0,
            ik_unreachable: false,
            commanded_position: tcp.position,
            commanded_yaw: 0.0,
        }
    }
}

fn approach(current: f64, target: f64, max_step: f64) -> f64 {
    let delta = target - current;
    if delta.abs() <= max_step {
        target
    } else {
        current + max_step.copysign(delta)
    }
}

/// Applies one command for `dt_ms` without advancing the clock.
pub fn apply_command(config: &SimConfig, state: &RobotState, cmd: &RobotCommand, dt_ms: u64) -> RobotState {
    let mut next = state.clone();
    let dt = dt_ms as f64 / 1000.0;
    match *cmd {
        RobotCommand::Hold => {}
        RobotCommand::GripperSet { opening } => {
            let target = opening.clamp(config.grip_min, config.grip_max);
            next.gripper_opening = approach(state.gripper_opening, target, config.gripper_speed * dt);
        }
        RobotCommand::MoveTcp { .. } | RobotCommand::SetYaw { .. } => {
            let (position, yaw) = match *cmd {
                RobotCommand::MoveTcp { x, y, z } => (Vector3::new(x, y, z), state.commanded_yaw),
                RobotCommand::SetYaw { yaw } => (state.commanded_position, yaw),
                _ => unreachable!(),
            };
            let target = Pose::new(position, config.tool_orientation(yaw));
            match ik(&config.chain, &target, &state.q, &config.ik) {
                Ok(sol) => {
                    let max_step = config.chain.max_joint_speed * dt;
                    for i in 0..6 {
                        next.q[i] = approach(state.q[i], sol.q[i], max_step);
                    }
                    config.chain.clamp(&mut next.q);
                    next.tcp = fk(&config.chain, &next.q).expect("six joints");
                    next.ik_unreachable = false;
                    next.commanded_position = position;
                    next.commanded_yaw = yaw;
                }
                Err(_) => next.ik_unreachable = true,
            }
        }
    }
    next
}

/// One simulator step: apply the command for `dt_ms` and advance the clock.
pub fn step_sim(config: &SimConfig, state: &RobotState, cmd: &RobotCommand, dt_ms: u64) -> RobotState {
    let mut next = apply_command(config, state, cmd, dt_ms);
    next.time_ms = state.time_ms + dt_ms;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_joint() -> KinematicChain {
        KinematicChain {
            rows: vec![DhRow::new(1.0, 0.0, 0.0)],
            joint_limits: vec![(-PI, PI)],
            max_joint_speed: 1.0,
        }
    }

    #[test]
    fn planar_link() {
        let c = one_joint();
        let p = fk(&c, &[0.0]).unwrap();
        assert!((p.position - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(p.orientation.angle() < 1e-12);
        let p = fk(&c, &[FRAC_PI_2]).unwrap();
        assert!((p.position - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let j = jacobian(&c, &[0.0]).unwrap();
        let expected = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for r in 0..6 {
            assert!((j[(r, 0)] - expected[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        let c = KinematicChain::default_arm();
        assert!(matches!(fk(&c, &[0.0; 5]), Err(KinematicsError::DimensionMismatch { expected: 6, got: 5 })));
    }

    #[test]
    fn ik_at_target_takes_no_iterations() {
        let c = KinematicChain::default_arm();
        let q0 = [0.2, -1.2, 1.3, -1.7, -1.4, 0.3];
        let target = fk(&c, &q0).unwrap();
        let sol = ik(&c, &target, &q0, &IkOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.q, q0.to_vec());
    }

    #[test]
    fn far_target_is_unreachable() {
        let c = KinematicChain::default_arm();
        let target = Pose::new(Vector3::new(100.0, 0.0, 0.0), UnitQuaternion::identity());
        assert!(matches!(
            ik(&c, &target, &HOME_Q, &IkOptions::default()),
            Err(KinematicsError::Unreachable { iterations: 200, .. })
        ));
    }

    #[test]
    fn hold_only_advances_time() {
        let cfg = SimConfig::default();
        let s = RobotState::at_home(&cfg);
        let n = step_sim(&cfg, &s, &RobotCommand::Hold, 250);
        assert_eq!(n.time_ms, 250);
        assert_eq!(RobotState { time_ms: 0, ..n }, s);
    }

    #[test]
    fn joint_rate_limit() {
        assert!((approach(0.0, 0.5, 1.0 * 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(approach(0.0, 0.05, 0.1), 0.05);
        assert!((approach(0.0, -0.5, 0.1) + 0.1).abs() < 1e-15);
        let cfg = SimConfig::default();
        let s = RobotState::at_home(&cfg);
        // target the pose of a configuration 0.5 rad away in the base joint
        let mut q = HOME_Q;
        q[0] += 0.5;
        let p = fk(&cfg.chain, &q).unwrap().position;
        let n = step_sim(&cfg, &s, &RobotCommand::MoveTcp { x: p.x, y: p.y, z: p.z }, 100);
        assert!((n.q[0] - s.q[0] - 0.1).abs() < 1e-12, "{}", n.q[0] - s.q[0]);
        for i in 1..6 {
            assert!((n.q[i] - s.q[i]).abs() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn gripper_slews() {
        let cfg = SimConfig::default();
        let s = RobotState::at_home(&cfg);
        let n = step_sim(&cfg, &s, &RobotCommand::GripperSet { opening: 0.0 }, 100);
        assert!((n.gripper_opening - (cfg.grip_max - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn unreachable_move_flags_and_keeps_pose() {
        let cfg = SimConfig::default();
        let s = RobotState::at_home(&cfg);
        let n = step_sim(&cfg, &s, &RobotCommand::MoveTcp { x: 50.0, y: 0.0, z: 0.0 }, 10);
        assert!(n.ik_unreachable);
        assert_eq!(n.q, s.q);
        assert_eq!(n.commanded_position, s.commanded_position);
    }

    #[test]
    fn home_tool_points_down() {
        let cfg = SimConfig::default();
        let z = cfg.tool_down * Vector3::z();
        assert!((z + Vector3::z()).norm() < 1e-12);
    }
}
