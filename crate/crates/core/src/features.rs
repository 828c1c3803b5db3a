//! Per-frame feature vector: normalized coordinates, finger bend angles and
//! pairwise landmark distances.

use thiserror::Error;

use crate::gesture::GestureClass;
use crate::landmark::{HandFrame, LabeledSample, Landmark, FINGER_CHAINS, LANDMARK_COUNT, MIDDLE_MCP, WRIST};

pub const NORMALIZED_LEN: usize = LANDMARK_COUNT * 3;
pub const ANGLE_LEN: usize = 15;
pub const DISTANCE_LEN: usize = LANDMARK_COUNT * (LANDMARK_COUNT - 1) / 2;
pub const FEATURE_LEN: usize = NORMALIZED_LEN + ANGLE_LEN + DISTANCE_LEN;

pub const ANGLE_OFFSET: usize = NORMALIZED_LEN;
pub const DISTANCE_OFFSET: usize = NORMALIZED_LEN + ANGLE_LEN;

pub const DEGENERACY_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("degenerate hand: {0}")]
    DegenerateHand(String),
    #[error("expected {expected} landmarks, got {got}")]
    LandmarkCount { expected: usize, got: usize },
}

/// What a feature index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Coord { landmark: usize, axis: usize },
    Bend { finger: usize, joint: usize },
    Distance { i: usize, j: usize },
}

/// Index of the distance feature for the pair `(i, j)`, `i < j`.
pub const fn distance_index(i: usize, j: usize) -> usize {
    // pairs before row i: sum_{r<i} (20 - r)
    let before = i * (2 * LANDMARK_COUNT - i - 1) / 2;
    DISTANCE_OFFSET + before + (j - i - 1)
}

/// The full index map, position `k` describes feature `k`.
pub fn feature_index_map() -> Vec<FeatureKind> {
    let mut map = Vec::with_capacity(FEATURE_LEN);
    for landmark in 0..LANDMARK_COUNT {
        for axis in 0..3 {
            map.push(FeatureKind::Coord { landmark, axis });
        }
    }
    for finger in 0..5 {
        for joint in 0..3 {
            map.push(FeatureKind::Bend { finger, joint });
        }
    }
    for i in 0..LANDMARK_COUNT {
        for j in (i + 1)..LANDMARK_COUNT {
            map.push(FeatureKind::Distance { i, j });
        }
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

fn check_count(frame: &HandFrame) -> Result<(), FeatureError> {
    if frame.landmarks.len() != LANDMARK_COUNT {
        return Err(FeatureError::LandmarkCount { expected: LANDMARK_COUNT, got: frame.landmarks.len() });
    }
    Ok(())
}

fn sub(a: Landmark, b: Landmark) -> [f64; 3] {
    [a.x - b.x, a.y - b.y, a.z - b.z]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Wrist-anchored coordinates scaled so the wrist to middle knuckle distance is 1.
pub fn normalized_points(frame: &HandFrame) -> Result<Vec<[f64; 3]>, FeatureError> {
    check_count(frame)?;
    let wrist = frame.landmarks[WRIST];
    let reference = norm(sub(frame.landmarks[MIDDLE_MCP], wrist));
    if !(reference >= DEGENERACY_EPS) {
        return Err(FeatureError::DegenerateHand(format!(
            "wrist to middle knuckle distance {reference:e} below {DEGENERACY_EPS:e}"
        )));
    }
    Ok(frame
        .landmarks
        .iter()
        .map(|&l| {
            let d = sub(l, wrist);
            [d[0] / reference, d[1] / reference, d[2] / reference]
        })
        .collect())
}

pub fn normalize_landmarks(frame: &HandFrame) -> Result<Vec<f64>, FeatureError> {
    Ok(normalized_points(frame)?.into_iter().flatten().collect())
}

/// Three bend angles per finger, 0 for a straight finger.
pub fn joint_angles(frame: &HandFrame) -> Result<Vec<f64>, FeatureError> {
    check_count(frame)?;
    let mut out = Vec::with_capacity(ANGLE_LEN);
    for chain in FINGER_CHAINS {
        let mut bones = [[0.0; 3]; 4];
        for k in 0..4 {
            let v = sub(frame.landmarks[chain[k + 1]], frame.landmarks[chain[k]]);
            let len = norm(v);
            if !(len > DEGENERACY_EPS) {
                return Err(FeatureError::DegenerateHand(format!(
                    "zero-length bone between landmarks {} and {}",
                    chain[k],
                    chain[k + 1]
                )));
            }
            bones[k] = [v[0] / len, v[1] / len, v[2] / len];
        }
        for k in 0..3 {
            out.push(bend_angle(bones[k], bones[k + 1]));
        }
    }
    Ok(out)
}

/// Angle between two unit bone directions. Equal to `acos(clamp(u·v))` but
/// keeps full precision near 0 and π, where `acos` loses about half the digits.
fn bend_angle(u: [f64; 3], v: [f64; 3]) -> f64 {
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    norm(cross).atan2(dot)
}

/// Distances between all landmark pairs of the normalized hand, lexicographic order.
pub fn pairwise_distances(frame: &HandFrame) -> Result<Vec<f64>, FeatureError> {
    let pts = normalized_points(frame)?;
    Ok(pairwise_from_points(&pts))
}

fn pairwise_from_points(pts: &[[f64; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(DISTANCE_LEN);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = [pts[j][0] - pts[i][0], pts[j][1] - pts[i][1], pts[j][2] - pts[i][2]];
            out.push(norm(d));
        }
    }
    out
}

pub fn feature_vector(frame: &HandFrame) -> Result<FeatureVector, FeatureError> {
    let pts = normalized_points(frame)?;
    let angles = joint_angles(frame)?;
    let mut values = Vec::with_capacity(FEATURE_LEN);
    values.extend(pts.iter().flatten());
    values.extend(angles);
    values.extend(pairwise_from_points(&pts));
    debug_assert_eq!(values.len(), FEATURE_LEN);
    Ok(FeatureVector(values))
}

/// Feature rows for training; fails on the first degenerate frame with its index.
pub fn featurize(samples: &[LabeledSample]) -> Result<Vec<(Vec<f64>, GestureClass)>, (usize, FeatureError)> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| feature_vector(&s.frame).map(|f| (f.0, s.label)).map_err(|e| (i, e)))
        .collect()
}
