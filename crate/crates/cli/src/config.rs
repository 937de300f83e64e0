//! Merging `key=value` config files into the argument list.
//!
//! Config keys are long flag names without the dashes. Their values are
//! inserted right after the subcommand, ahead of the user's own flags, so
//! with `args_override_self` an explicit flag always wins.

use qflow::io::parse_config;
use std::ffi::OsString;

pub const SUBCOMMANDS: [&str; 5] = ["fit", "register", "atlas", "evaluate", "phantom"];
const SWITCHES: [&str; 1] = ["no-term-b"];
const GLOBAL: [&str; 1] = ["threads"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
        if SUBCOMMANDS.contains(&s.as_ref()) {
            break;
        }
    }
    None
}

pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let pairs = parse_config(&text).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (k, v) in pairs {
        let target = if GLOBAL.contains(&k.as_str()) { &mut global } else { &mut local };
        if SWITCHES.contains(&k.as_str()) {
            match v.as_str() {
                "true" | "1" | "yes" => target.push(OsString::from(format!("--{k}"))),
                "false" | "0" | "no" => {}
                _ => return Err(format!("config key {k}: expected true or false, got '{v}'")),
            }
        } else {
            target.push(OsString::from(format!("--{k}={v}")));
        }
    }
    let sub = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()));
    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    out.push(args[0].clone());
    out.extend(global);
    match sub {
        Some(i) => {
            out.extend(args[1..=i].iter().cloned());
            out.extend(local);
            out.extend(args[i + 1..].iter().cloned());
        }
        None => out.extend(args[1..].iter().cloned()),
    }
    Ok(out)
}
