use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn teleop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teleop")).args(args).output().unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn f(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn gen_dataset_defaults_and_determinism() {
    let dir = TempDir::new().unwrap();
    let o = teleop(&["gen-dataset", "--out", &p(&dir, "a.jsonl")]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    for line in ["Move        200", "Angle       200", "Grab        200", "NoGesture   400"] {
        assert!(stdout.contains(line), "{stdout}");
    }
    let a = std::fs::read(p(&dir, "a.jsonl")).unwrap();
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 1000);
    assert_eq!(code(&teleop(&["gen-dataset", "--out", &p(&dir, "b.jsonl")])), 0);
    assert_eq!(a, std::fs::read(p(&dir, "b.jsonl")).unwrap());

    assert_eq!(code(&teleop(&["gen-dataset", "--counts", "0,0,0,0", "--out", &p(&dir, "e.jsonl")])), 0);
    assert!(std::fs::read(p(&dir, "e.jsonl")).unwrap().is_empty());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&teleop(&[])), 1);
    assert_eq!(code(&teleop(&["fly"])), 1);
    assert_eq!(code(&teleop(&["gen-dataset"])), 1);
    assert_eq!(code(&teleop(&["gen-dataset", "--counts", "1,2", "--out", "/dev/null"])), 1);
    assert_eq!(code(&teleop(&["simulate", "--out-log", "/dev/null"])), 1);
    assert_eq!(code(&teleop(&["simulate", "--trace", "t", "--out-log", "/dev/null"])), 1);
    assert_eq!(code(&teleop(&["replay", "--policy", "anarchy", "--trace", "t", "--model", "m", "--out-commands", "c"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = teleop(&["replay", "--trace", &p(&dir, "nope.jsonl"), "--model", &f("model.gbdt"), "--out-commands", &p(&dir, "c")]);
    assert_eq!(code(&missing), 2);
    assert!(!dir.path().join("c").exists());

    std::fs::write(dir.path().join("bad.jsonl"), "{\"v\":1}\n").unwrap();
    let bad = teleop(&["replay", "--trace", &p(&dir, "bad.jsonl"), "--model", &f("model.gbdt"), "--out-commands", &p(&dir, "c")]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));

    // a model trained on 4-dimensional inputs cannot read 288 features
    let rows: Vec<(Vec<f64>, teleop_core::gesture::GestureClass)> = teleop_core::gesture::GestureClass::TRAINABLE
        .iter()
        .flat_map(|&c| (0..5).map(move |i| (vec![c.index() as f64, i as f64, 0.0, 1.0], c)))
        .collect();
    let cfg = teleop_core::gbdt::TrainConfig { rounds: 2, min_samples_leaf: 1, ..Default::default() };
    let small = teleop_core::gbdt::train(&rows, &cfg).unwrap();
    std::fs::write(dir.path().join("small.gbdt"), teleop_core::gbdt::save_model(&small)).unwrap();
    assert_eq!(code(&teleop(&["gen-dataset", "--counts", "5,5,5,5", "--out", &p(&dir, "d.jsonl")])), 0);
    assert_eq!(code(&teleop(&["eval", "--data", &p(&dir, "d.jsonl"), "--model", &p(&dir, "small.gbdt")])), 2);

    std::fs::write(dir.path().join("junk.gbdt"), "not a model").unwrap();
    assert_eq!(code(&teleop(&["eval", "--data", &p(&dir, "d.jsonl"), "--model", &p(&dir, "junk.gbdt")])), 2);
}

#[test]
fn train_then_eval_on_the_held_out_fifth() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&teleop(&["gen-dataset", "--out", &p(&dir, "d.jsonl")])), 0);
    let t = teleop(&["train", "--data", &p(&dir, "d.jsonl"), "--out-model", &p(&dir, "m.gbdt")]);
    assert_eq!(code(&t), 0);
    assert!(String::from_utf8(t.stdout).unwrap().contains("final train loss"));
    // the committed model is exactly this run's output
    assert_eq!(std::fs::read(p(&dir, "m.gbdt")).unwrap(), std::fs::read(fixture("model.gbdt")).unwrap());

    let e = teleop(&["eval", "--data", &p(&dir, "d.jsonl"), "--model", &p(&dir, "m.gbdt"), "--min-accuracy", "0.91"]);
    assert_eq!(code(&e), 0);
    let report = String::from_utf8(e.stdout).unwrap();
    assert!(report.contains("(200 samples)"), "{report}");
    assert!(report.contains("NoGesture"));
    let e = teleop(&["eval", "--data", &p(&dir, "d.jsonl"), "--model", &p(&dir, "m.gbdt"), "--min-accuracy", "1.01"]);
    assert_eq!(code(&e), 3);
}

#[test]
fn replay_twice_gives_identical_command_files() {
    let dir = TempDir::new().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let o = teleop(&["replay", "--trace", &f("grab.jsonl"), "--model", &f("model.gbdt"), "--out-commands", &p(&dir, name)]);
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(p(&dir, "a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(p(&dir, "b.jsonl")).unwrap());
    assert_eq!(a, std::fs::read(fixture("grab_commands.jsonl")).unwrap());
}

fn final_line(log: &Path) -> String {
    std::fs::read_to_string(log).unwrap().lines().last().unwrap().to_string()
}

#[test]
fn pipette_scenario_via_trace_and_via_commands() {
    let dir = TempDir::new().unwrap();
    let o = teleop(&[
        "simulate", "--trace", &f("pipette_demo.jsonl"), "--model", &f("model.gbdt"), "--scene", &f("pipette.scene"),
        "--out-log", &p(&dir, "trace.log"),
    ]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("grasped pipette"), "{stdout}");
    assert!(stdout.contains("over tube"), "{stdout}");
    let last = final_line(&dir.path().join("trace.log"));
    assert!(last.starts_with("{\"final\":"));
    assert!(last.contains("\"over\":\"tube\""));
    assert!(last.contains(&format!("{:?}", [".....##..."; 10]).replace(' ', "")));

    let r = teleop(&[
        "replay", "--trace", &f("pipette_demo.jsonl"), "--model", &f("model.gbdt"), "--out-commands", &p(&dir, "c.jsonl"),
    ]);
    assert_eq!(code(&r), 0);
    let s = teleop(&[
        "simulate", "--commands", &p(&dir, "c.jsonl"), "--scene", &f("pipette.scene"), "--out-log", &p(&dir, "cmd.log"),
    ]);
    assert_eq!(code(&s), 0);
    assert!(final_line(&dir.path().join("cmd.log")).contains("\"over\":\"tube\""));
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("teleop.cfg");
    std::fs::write(
        &cfg,
        format!("# shared settings\ncounts = 2,2,2,2\nseed = 5\nout = \"{}\"\nrounds = 3   # train only\n", p(&dir, "cfg.jsonl")),
    )
    .unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    assert_eq!(code(&teleop(&["--config", &cfg, "gen-dataset", "--seed", "9"])), 0);
    assert_eq!(code(&teleop(&["gen-dataset", "--counts", "2,2,2,2", "--seed", "9", "--out", &p(&dir, "ref.jsonl")])), 0);
    assert_eq!(std::fs::read(p(&dir, "cfg.jsonl")).unwrap(), std::fs::read(p(&dir, "ref.jsonl")).unwrap());

    std::fs::write(dir.path().join("bad.cfg"), "warp = 9\n").unwrap();
    assert_eq!(code(&teleop(&["gen-dataset", "--config", &p(&dir, "bad.cfg"), "--out", "/dev/null"])), 1);
    assert_eq!(code(&teleop(&["--config", &p(&dir, "missing.cfg"), "gen-dataset", "--out", "/dev/null"])), 2);
}

#[test]
fn serve_runs_for_the_requested_time() {
    let o = teleop(&[
        "serve", "--model", &f("model.gbdt"), "--ws", "127.0.0.1:0", "--tcp", "127.0.0.1:0", "--duration-ms", "200",
        "--tactile-full-rate",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("websocket on ws://127.0.0.1:"), "{stdout}");
}
