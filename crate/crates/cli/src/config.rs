//! INI configuration files whose keys stand in for command-line flags.
//!
//! Keys outside any section apply to every subcommand that has a flag of
//! that name; keys in a `[<subcommand>]` section apply to that subcommand
//! only and must name one of its flags. Underscores and dashes are
//! interchangeable. Flags given on the command line win.

use std::ffi::OsString;

use clap::{ArgAction, Command};
use ini::Ini;

use crate::CliError;

/// Removes `--config <file>` from `args` and appends the flags it supplies.
pub fn expand(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut args: Vec<String> = args
        .into_iter()
        .map(|a| a.into_string().map_err(|_| CliError::Usage("non-UTF-8 argument".into())))
        .collect::<Result<_, _>>()?;
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            if i + 1 >= args.len() {
                return Err(CliError::Usage("--config needs a file".into()));
            }
            config = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(v) = args[i].strip_prefix("--config=") {
            config = Some(v.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config else {
        return Ok(args.into_iter().map(OsString::from).collect());
    };
    let ini = Ini::load_from_file(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
    let Some(sub_name) = args
        .iter()
        .skip(1)
        .find(|a| cmd.get_subcommands().any(|s| s.get_name() == a.as_str()))
        .cloned()
    else {
        return Ok(args.into_iter().map(OsString::from).collect());
    };
    let sub = cmd.find_subcommand(&sub_name).expect("subcommand exists");

    let mut entries: Vec<(String, String, bool)> = Vec::new();
    for (section, strict) in [(None, false), (Some(sub_name.as_str()), true)] {
        if let Some(props) = ini.section(section) {
            for (k, v) in props.iter() {
                let key = k.trim().replace('_', "-");
                entries.retain(|(existing, _, _)| *existing != key);
                entries.push((key, v.trim().to_string(), strict));
            }
        }
    }
    for (key, value, strict) in entries {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            if strict {
                return Err(CliError::Config(format!("{path}: [{sub_name}] has unknown key `{key}`")));
            }
            continue;
        };
        let flag = format!("--{key}");
        if args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "yes" | "1" => args.push(flag),
                "false" | "no" | "0" => {}
                _ => return Err(CliError::Config(format!("{path}: `{key}` expects true or false"))),
            },
            _ => {
                args.push(flag);
                args.push(value);
            }
        }
    }
    Ok(args.into_iter().map(OsString::from).collect())
}
