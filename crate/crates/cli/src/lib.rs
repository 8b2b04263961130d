//! Command-line front end for the `toolret` library.

pub mod args;
mod commands;
mod error;
mod manifest;

pub use args::Cli;
pub use error::CliError;
pub use manifest::Manifest;

use clap::Parser;
use serde_json::Value;
use std::ffi::OsString;
use std::path::Path;

pub const SUBCOMMANDS: [&str; 6] = [
    "build-embeddings",
    "train",
    "retrieve",
    "evaluate",
    "gen-dataset",
    "grad-check",
];

/// Turns a JSON config object into `--flag value` arguments. Arrays become
/// comma-separated values, `true` becomes a bare switch and `false` or
/// `null` is dropped.
pub fn config_to_args(config: &Value) -> Result<Vec<OsString>, CliError> {
    let Value::Object(map) = config else {
        return Err(CliError::Validation(
            "config file must hold a JSON object".into(),
        ));
    };
    let mut out = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            other => Err(CliError::Validation(format!(
                "config key `{key}` has unsupported value {other}"
            ))),
        };
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let joined = items
                    .iter()
                    .map(scalar)
                    .collect::<Result<Vec<_>, _>>()?
                    .join(",");
                out.push(flag.into());
                out.push(joined.into());
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v)?.into());
            }
        }
    }
    Ok(out)
}

/// Splices arguments from `--config FILE` in right after the subcommand name
/// so that anything given on the command line overrides them.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_owned)
        }
    });
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read config {path}: {e}")))?;
    let config: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {path}: {e}")))?;
    let extra = config_to_args(&config)?;
    let at = strs
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map(|i| i + 1)
        .unwrap_or(argv.len());
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    commands::dispatch(cli)
}

/// Parses, runs and maps the outcome to a process exit code.
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}
