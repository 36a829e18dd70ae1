//! Plain-text `key = value` option files for `--config`.
//!
//! Each line becomes `--key value`; `key = true` becomes a bare `--key` and
//! `key = false` is dropped. Blank lines and lines starting with `#` are
//! ignored.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse(text: &str, origin: &Path) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i as u64 + 1,
            message: format!("expected key = value, found {line:?}"),
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i as u64 + 1,
                message: "empty key".into(),
            });
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_owned());
            }
        }
    }
    Ok(args)
}

pub fn load(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub const SUBCOMMANDS: [&str; 7] = [
    "generate",
    "train-model",
    "train-explainer",
    "explain",
    "evaluate",
    "benchmark",
    "oracle",
];

/// Splices the arguments of any `--config FILE` into `argv` right after the
/// subcommand, so that flags given on the command line come later and win.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut file_args = Vec::new();
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::Usage("--config needs a file path".into()))?;
            file_args.extend(load(Path::new(&path))?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            file_args.extend(load(Path::new(path))?);
        } else {
            rest.push(arg);
        }
    }
    if file_args.is_empty() {
        return Ok(rest);
    }
    let at = rest
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(rest.len(), |p| p + 1);
    rest.splice(at..at, file_args);
    Ok(rest)
}
