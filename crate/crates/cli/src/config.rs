//! `key = value` config files. Keys are long flag names without dashes;
//! `#` starts a comment; values may be quoted.

use std::collections::BTreeMap;
use std::ffi::OsString;

use clap::Command;

use crate::CliError;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key = value", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.insert(key, value.to_string());
    }
    Ok(out)
}

/// Turns config entries into flags for `sub`. Keys that belong to another
/// subcommand are skipped; keys no subcommand knows are an error.
pub fn to_args(entries: &BTreeMap<String, String>, root: &Command, sub: &str) -> Result<Vec<OsString>, CliError> {
    let Some(cmd) = root.find_subcommand(sub) else { return Ok(Vec::new()) };
    let known = |c: &Command, key: &str| c.get_arguments().any(|a| a.get_long() == Some(key));
    let mut args = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        match cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) {
            Some(arg) if arg.get_action().takes_values() => {
                args.push(format!("--{key}").into());
                args.push(value.into());
            }
            Some(_) => match value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => return Err(CliError::Usage(format!("config key {key}: expected true or false, got {other}"))),
            },
            None if root.get_subcommands().any(|c| known(c, key)) => {}
            None => return Err(CliError::Usage(format!("unknown config key {key}"))),
        }
    }
    Ok(args)
}
