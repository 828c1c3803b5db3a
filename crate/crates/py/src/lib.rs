//! Python bindings: synthetic frames, features, the classifier, forward
//! kinematics, protocol validation and trace replay.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use teleop_core::features;
use teleop_core::gbdt::load_model;
use teleop_core::gesture::GestureClass;
use teleop_core::landmark::{decode_trace, Hand, HandFrame, Landmark, LANDMARK_COUNT};
use teleop_core::pipeline::{encode_commands, replay, Classifier as CoreClassifier, Pipeline, PipelineConfig};
use teleop_core::protocol::{decode_message, encode_message};
use teleop_core::robot::{fk, KinematicChain};
use teleop_core::scene::Scene;
use teleop_core::synth;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn frame_from(landmarks: Vec<[f64; 3]>) -> PyResult<HandFrame> {
    if landmarks.len() != LANDMARK_COUNT {
        return Err(value_error(format!("expected {LANDMARK_COUNT} landmarks, got {}", landmarks.len())));
    }
    Ok(HandFrame {
        user_id: "python".into(),
        hand: Hand::Right,
        landmarks: landmarks.into_iter().map(|[x, y, z]| Landmark::new(x, y, z)).collect(),
        timestamp_ms: 0,
        confidence: 1.0,
    })
}

fn parse_class(name: &str) -> PyResult<GestureClass> {
    GestureClass::parse(name).ok_or_else(|| value_error(format!("unknown gesture class {name:?}")))
}

/// Landmarks `[[x, y, z]] * 21` of a synthetic hand of the given class.
#[pyfunction]
#[pyo3(signature = (class_name, seed, noise = synth::DEFAULT_NOISE))]
fn generate_sample(class_name: &str, seed: u64, noise: f64) -> PyResult<Vec<[f64; 3]>> {
    let class = parse_class(class_name)?;
    if !class.is_trainable() {
        return Err(value_error("FingerDistance is composite and has no template"));
    }
    Ok(synth::generate_sample(class, seed, noise).landmarks.iter().map(|l| l.to_array()).collect())
}

/// The 288-dimensional feature vector of one hand.
#[pyfunction]
fn feature_vector(landmarks: Vec<[f64; 3]>) -> PyResult<Vec<f64>> {
    let frame = frame_from(landmarks)?;
    Ok(features::feature_vector(&frame).map_err(value_error)?.as_slice().to_vec())
}

/// Tool position `[x, y, z]` and orientation `[w, x, y, z]` for six joint angles.
#[pyfunction]
fn forward_kinematics(q: Vec<f64>) -> PyResult<([f64; 3], [f64; 4])> {
    let pose = fk(&KinematicChain::default_arm(), &q).map_err(value_error)?;
    Ok((pose.position_array(), pose.quat_wxyz()))
}

/// Decodes and re-encodes a wire message; returns `(type, canonical bytes)`.
/// Invalid input raises `ValueError("<code>: <detail>")`.
#[pyfunction]
fn canonical_message(data: &[u8]) -> PyResult<(String, Vec<u8>)> {
    let env = decode_message(data).map_err(|e| value_error(format!("{}: {e}", e.code())))?;
    Ok((env.message.type_name().to_string(), encode_message(&env)))
}

#[pyclass]
struct Classifier {
    inner: CoreClassifier,
}

#[pymethods]
impl Classifier {
    #[new]
    fn new(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let model = load_model(&bytes).map_err(value_error)?;
        Ok(Self { inner: CoreClassifier::new(model).map_err(value_error)? })
    }

    /// Class probabilities in the order Move, Angle, Grab, NoGesture.
    fn predict_proba(&self, landmarks: Vec<[f64; 3]>) -> PyResult<[f64; 4]> {
        Ok(self.inner.classify(&frame_from(landmarks)?).proba)
    }

    fn classify(&self, landmarks: Vec<[f64; 3]>) -> PyResult<String> {
        Ok(self.inner.classify(&frame_from(landmarks)?).class.name().to_string())
    }

    /// Runs a JSONL landmark trace through the pipeline and returns the
    /// command stream as JSONL.
    fn replay(&self, trace: &str) -> PyResult<String> {
        let frames = decode_trace(trace).map_err(value_error)?;
        let mut pipeline = Pipeline::new(self.inner.clone(), PipelineConfig::default(), Scene::default());
        let records = replay(&mut pipeline, &frames).map_err(value_error)?;
        Ok(encode_commands(&records))
    }
}

#[pymodule]
fn teleop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FEATURE_LEN", features::FEATURE_LEN)?;
    m.add("CLASSES", GestureClass::TRAINABLE.iter().map(|c| c.name()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(feature_vector, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_message, m)?)?;
    m.add_class::<Classifier>()?;
    Ok(())
}
