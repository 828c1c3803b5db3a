use std::path::PathBuf;
use std::process::Command;

const COMMANDS: [&str; 7] = ["", "gen-dataset", "train", "eval", "replay", "simulate", "serve"];

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"))
}

#[test]
fn help_text_matches_golden_files() {
    for cmd in COMMANDS {
        let mut args: Vec<&str> = if cmd.is_empty() { vec![] } else { vec![cmd] };
        args.push("--help");
        let out = Command::new(env!("CARGO_BIN_EXE_teleop")).args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let name = if cmd.is_empty() { "teleop" } else { cmd };
        let expected = std::fs::read_to_string(golden(name)).unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), expected, "help for {name} changed");
    }
}

#[test]
fn every_flag_shows_its_default() {
    let root = teleop_cli::command();
    for sub in root.get_subcommands().filter(|s| s.get_name() != "help") {
        let help = std::fs::read_to_string(golden(sub.get_name())).unwrap();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(help.contains(&format!("--{long}")), "{} --{long} missing from help", sub.get_name());
            for d in arg.get_default_values() {
                let shown = format!("[default: {}]", d.to_string_lossy());
                assert!(help.contains(&shown), "{} --{long}: {shown} missing", sub.get_name());
            }
        }
    }
}
