//! `key=value` config files, spliced into the argument list ahead of the
//! user's own flags so that flags win.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Command};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value, got `{line}`", n + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Remove `--config FILE` from `args` and insert the file's settings right
/// after the subcommand. Keys another subcommand understands are skipped.
pub fn expand(cmd: &Command, mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = if let Some(p) = args[pos].strip_prefix("--config=") {
        let p = p.to_string();
        args.remove(pos);
        p
    } else {
        if pos + 1 >= args.len() {
            bail!("--config needs a file");
        }
        args.remove(pos);
        args.remove(pos)
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let entries = parse(&text)?;

    let Some(sub_pos) = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map(|(i, _)| i)
    else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(&args[sub_pos]) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    for (key, value) in entries {
        match sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) {
            Some(arg) => {
                if matches!(arg.get_action(), ArgAction::SetTrue) {
                    match value.as_str() {
                        "true" | "1" | "yes" => injected.push(format!("--{key}")),
                        "false" | "0" | "no" => {}
                        other => bail!("config key {key}: expected true or false, got `{other}`"),
                    }
                } else {
                    injected.push(format!("--{key}={value}"));
                }
            }
            None => {
                let known = cmd
                    .get_subcommands()
                    .any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
                if !known {
                    bail!("unknown config key `{key}`");
                }
            }
        }
    }
    args.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(args)
}
