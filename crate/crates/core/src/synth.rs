//! Synthetic labeled hand frames from a parametric 21-point skeleton.
//!
//! The skeleton lives in a hand-local frame where the wrist is the origin,
//! the palm lies in the XY plane with the fingers pointing along +Y and the
//! palm normal is +Z. Every finger is a chain of three bones bent in the plane
//! spanned by its palm-bone direction and a fixed curl direction, so the
//! angle between consecutive bones is exactly the requested bend. Posing
//! applies a global rotation, uniform scale and translation, then an
//! orthographic projection to image coordinates; none of these change the
//! bend angles.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::gesture::GestureClass;
use crate::landmark::{Hand, HandFrame, LabeledSample, Landmark, FINGER_CHAINS, LANDMARK_COUNT};

pub const DEFAULT_NOISE: f64 = 0.08;

/// Per-class bend templates in radians.
pub const OPEN_BEND: f64 = 0.0;
pub const FIST_BEND: f64 = 1.4;
pub const NOGESTURE_BEND_RANGE: (f64, f64) = (0.3, 1.0);

/// Knuckle (base) points of thumb, index, middle, ring and pinky in hand units;
/// the middle knuckle sits at unit distance from the wrist.
const BASES: [[f64; 3]; 5] = [
    [0.35, 0.30, 0.0],
    [0.30, 0.95, 0.0],
    [0.0, 1.0, 0.0],
    [-0.25, 0.93, 0.0],
    [-0.48, 0.80, 0.0],
];

const BONE_LENGTHS: [[f64; 3]; 5] = [
    [0.40, 0.32, 0.28],
    [0.45, 0.27, 0.22],
    [0.50, 0.30, 0.24],
    [0.46, 0.28, 0.22],
    [0.36, 0.22, 0.19],
];

/// Image placement of a hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    /// Wrist position in normalized image coordinates.
    pub wrist_u: f64,
    pub wrist_v: f64,
    /// Image units per hand unit (wrist to middle knuckle).
    pub scale: f64,
    /// In-plane rotation, positive tilts the fingers toward +u.
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Default for HandPose {
    fn default() -> Self {
        Self { wrist_u: 0.5, wrist_v: 0.72, scale: 0.16, roll: 0.0, pitch: 0.0, yaw: 0.0 }
    }
}

fn bone_directions(finger: usize) -> (Vector3<f64>, Vector3<f64>) {
    let base = Vector3::from(BASES[finger]);
    let d0 = base.normalize();
    let normal = Vector3::z();
    let curl = if finger == 0 {
        // thumb folds across the palm
        let across = normal.cross(&d0).normalize();
        (0.7 * normal + 0.7 * across).normalize()
    } else {
        normal
    };
    (d0, curl)
}

/// Skeleton points in hand-local coordinates for the given 15 bends
/// (thumb to pinky, base joint to distal joint).
pub fn skeleton(bends: &[f64; 15]) -> [Vector3<f64>; LANDMARK_COUNT] {
    let mut pts = [Vector3::zeros(); LANDMARK_COUNT];
    for (finger, chain) in FINGER_CHAINS.iter().enumerate() {
        let (d0, curl) = bone_directions(finger);
        let mut p = Vector3::from(BASES[finger]);
        pts[chain[1]] = p;
        let mut phi = 0.0;
        for bone in 0..3 {
            phi += bends[finger * 3 + bone];
            let dir = phi.cos() * d0 + phi.sin() * curl;
            p += BONE_LENGTHS[finger][bone] * dir;
            pts[chain[bone + 2]] = p;
        }
    }
    pts
}

/// Poses the skeleton and projects it into image coordinates. The left hand
/// is the mirror image of the right.
pub fn pose_hand(bends: &[f64; 15], pose: &HandPose, hand: Hand) -> Vec<Landmark> {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), -pose.roll)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pose.pitch)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), pose.yaw);
    let mirror = match hand {
        Hand::Right => 1.0,
        Hand::Left => -1.0,
    };
    skeleton(bends)
        .iter()
        .map(|p| {
            let p = rot * Vector3::new(mirror * p.x, p.y, p.z);
            Landmark {
                x: pose.wrist_u + pose.scale * p.x,
                y: pose.wrist_v - pose.scale * p.y,
                z: -pose.scale * p.z,
            }
        })
        .collect()
}

/// Shifts (and if needed shrinks about the wrist) a landmark set so every
/// x, y lies inside [margin, 1 - margin].
pub fn fit_to_image(landmarks: &mut [Landmark], margin: f64) {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for l in landmarks.iter() {
        lo_x = lo_x.min(l.x);
        hi_x = hi_x.max(l.x);
        lo_y = lo_y.min(l.y);
        hi_y = hi_y.max(l.y);
    }
    let room = 1.0 - 2.0 * margin;
    let extent = (hi_x - lo_x).max(hi_y - lo_y);
    if extent > room {
        let k = room / extent;
        let w = landmarks[0];
        for l in landmarks.iter_mut() {
            l.x = w.x + k * (l.x - w.x);
            l.y = w.y + k * (l.y - w.y);
            l.z *= k;
        }
        return fit_to_image(landmarks, margin);
    }
    let dx = if lo_x < margin { margin - lo_x } else if hi_x > 1.0 - margin { 1.0 - margin - hi_x } else { 0.0 };
    let dy = if lo_y < margin { margin - lo_y } else if hi_y > 1.0 - margin { 1.0 - margin - hi_y } else { 0.0 };
    for l in landmarks.iter_mut() {
        l.x += dx;
        l.y += dy;
    }
}

/// Bend template of a trainable class. NoGesture draws each bend uniformly.
pub fn class_template<R: Rng>(class: GestureClass, rng: &mut R) -> [f64; 15] {
    let mut bends = [0.0; 15];
    match class {
        GestureClass::Move => bends = [OPEN_BEND; 15],
        GestureClass::Grab => bends = [FIST_BEND; 15],
        GestureClass::Angle => {
            for (i, b) in bends.iter_mut().enumerate() {
                let finger = i / 3;
                *b = if finger == 1 || finger == 2 { OPEN_BEND } else { FIST_BEND };
            }
        }
        GestureClass::NoGesture => {
            let (lo, hi) = NOGESTURE_BEND_RANGE;
            for b in bends.iter_mut() {
                *b = rng.random_range(lo..=hi);
            }
        }
        GestureClass::FingerDistance => panic!("FingerDistance has no template"),
    }
    bends
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Deterministic synthetic frame for one trainable class.
///
/// Gaussian noise of `noise_scale` radians perturbs each bend (bends stay
/// non-negative) and the global rotation; translation and log-scale get
/// half that sigma in image units.
pub fn generate_sample(class: GestureClass, seed: u64, noise_scale: f64) -> HandFrame {
    assert!(class.is_trainable(), "{class:?} is not a trainable class");
    assert!(noise_scale >= 0.0, "noise_scale must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hand = if rng.random_bool(0.5) { Hand::Right } else { Hand::Left };
    let confidence = 0.85 + 0.15 * rng.random::<f64>();
    let landmarks = perturbed_landmarks(&mut rng, class, hand, &HandPose::default(), noise_scale);
    HandFrame { user_id: "synthetic".into(), hand, landmarks, timestamp_ms: 0, confidence }
}

fn perturbed_landmarks<R: Rng>(
    rng: &mut R,
    class: GestureClass,
    hand: Hand,
    base: &HandPose,
    noise_scale: f64,
) -> Vec<Landmark> {
    let mut bends = class_template(class, rng);
    for b in bends.iter_mut() {
        *b = (*b + gaussian(rng, noise_scale)).max(0.0);
    }
    let pose = HandPose {
        wrist_u: base.wrist_u + gaussian(rng, 0.5 * noise_scale),
        wrist_v: base.wrist_v + gaussian(rng, 0.5 * noise_scale),
        scale: base.scale * gaussian(rng, 0.5 * noise_scale).exp(),
        roll: base.roll + gaussian(rng, noise_scale),
        pitch: base.pitch + gaussian(rng, noise_scale),
        yaw: base.yaw + gaussian(rng, noise_scale),
    };
    let mut landmarks = pose_hand(&bends, &pose, hand);
    fit_to_image(&mut landmarks, 0.01);
    landmarks
}

/// A frame of `class` for a given hand with the wrist near `(wrist_u, wrist_v)`;
/// used to script demonstration traces.
pub fn scripted_frame(
    class: GestureClass,
    hand: Hand,
    wrist_u: f64,
    wrist_v: f64,
    seed: u64,
    noise_scale: f64,
) -> HandFrame {
    assert!(class.is_trainable(), "{class:?} is not a trainable class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = HandPose { wrist_u, wrist_v, ..HandPose::default() };
    let landmarks = perturbed_landmarks(&mut rng, class, hand, &base, noise_scale);
    HandFrame { user_id: "operator".into(), hand, landmarks, timestamp_ms: 0, confidence: 0.95 }
}

fn mix_seed(seed: u64, class: GestureClass, index: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((class.index() as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The dataset shape used for the classifier: 200 each of the three control
/// gestures and 400 of NoGesture.
pub fn paper_counts() -> BTreeMap<GestureClass, usize> {
    BTreeMap::from([
        (GestureClass::Move, 200),
        (GestureClass::Angle, 200),
        (GestureClass::Grab, 200),
        (GestureClass::NoGesture, 400),
    ])
}

/// Deterministic shuffled dataset. Timestamps are assigned after shuffling
/// at 33 ms spacing so the result is also a valid trace.
pub fn generate_dataset(
    counts: &BTreeMap<GestureClass, usize>,
    seed: u64,
    noise_scale: f64,
) -> Vec<LabeledSample> {
    let mut samples = Vec::new();
    for class in GestureClass::TRAINABLE {
        let n = counts.get(&class).copied().unwrap_or(0);
        for i in 0..n {
            let frame = generate_sample(class, mix_seed(seed, class, i as u64), noise_scale);
            samples.push(LabeledSample { frame, label: class });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    for (i, s) in samples.iter_mut().enumerate() {
        s.frame.timestamp_ms = 33 * i as u64;
    }
    samples
}
