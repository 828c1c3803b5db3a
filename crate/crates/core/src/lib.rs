//! Gesture-driven robot teleoperation pipeline.
//!
//! Hand landmark frames are turned into feature vectors, classified by a
//! boosted tree ensemble, debounced into stable gestures and mapped to robot
//! commands. Commands pass a multi-user arbiter before they reach a simulated
//! 6-DoF arm with a two-finger gripper and a 10×10 tactile array.

pub mod features;
pub mod gbdt;
pub mod gesture;
pub mod landmark;
pub mod pipeline;
pub mod protocol;
pub mod robot;
pub mod scene;
pub mod session;
pub mod synth;
pub mod tactile;
