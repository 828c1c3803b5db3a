//! Rewrites the committed fixtures: the reference model (trained on the 80%
//! split of the default synthetic set), the pipette scene and the two
//! scripted traces, plus the commands the grab trace produces.
//!
//!     cargo run --release -p teleop-core --example regenerate_fixtures

use std::fs;
use std::path::Path;

use teleop_core::features::featurize;
use teleop_core::gbdt::{save_model, stratified_split, train, TrainConfig};
use teleop_core::gesture::FsmConfig;
use teleop_core::landmark::encode_trace;
use teleop_core::pipeline::{encode_commands, grab_trace, pipette_demo_trace, pipette_scene_toml, replay, Classifier, Pipeline, PipelineConfig};
use teleop_core::scene::Scene;
use teleop_core::synth::{generate_dataset, paper_counts, DEFAULT_NOISE};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).unwrap();

    let samples = generate_dataset(&paper_counts(), 42, DEFAULT_NOISE);
    let rows = featurize(&samples).expect("synthetic frames are well formed");
    let labels: Vec<_> = rows.iter().map(|r| r.1).collect();
    let (train_idx, _) = stratified_split(&labels, 0.2, 42);
    let train_rows: Vec<_> = train_idx.iter().map(|&i| rows[i].clone()).collect();
    let model = train(&train_rows, &TrainConfig::default()).unwrap();
    fs::write(dir.join("model.gbdt"), save_model(&model)).unwrap();

    fs::write(dir.join("pipette.scene"), pipette_scene_toml(&FsmConfig::default())).unwrap();
    fs::write(dir.join("pipette_demo.jsonl"), encode_trace(&pipette_demo_trace(7))).unwrap();
    fs::write(dir.join("grab.jsonl"), encode_trace(&grab_trace(11))).unwrap();

    let classifier = Classifier::new(model).unwrap();
    let mut pipeline = Pipeline::new(classifier, PipelineConfig::default(), Scene::default());
    let commands = replay(&mut pipeline, &grab_trace(11)).unwrap();
    fs::write(dir.join("grab_commands.jsonl"), encode_commands(&commands)).unwrap();
    println!("fixtures written to {}", dir.display());
}
