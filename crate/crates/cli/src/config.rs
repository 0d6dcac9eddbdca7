//! Flat `key = value` config files merged into the command line.
//!
//! Keys are flag names without the leading dashes (`lr`, `patch-width`;
//! underscores are accepted for dashes). A flag given on the command line wins
//! over the same key in the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;

use crate::Cli;

pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        let (k, v) = (k.trim().replace('_', "-"), v.trim().to_string());
        if k.is_empty() || v.is_empty() {
            bail!("{}:{}: empty key or value", path.display(), i + 1);
        }
        if out.iter().any(|(seen, _): &(String, String)| *seen == k) {
            bail!("{}:{}: key {k:?} repeated", path.display(), i + 1);
        }
        out.push((k, v));
    }
    Ok(out)
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn given(argv: &[String], flag: &str) -> bool {
    argv.iter()
        .any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

/// Appends `--key value` for every config entry whose flag is absent from
/// `argv`. Keys must name flags of the selected subcommand.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let entries = parse_config(&text, path)?;

    let mut cmd = Cli::command();
    cmd.build();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .context("--config given without a subcommand")?;
    let known: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();

    let mut merged = argv.clone();
    for (key, value) in entries {
        if key == "config" || !known.contains(&key) {
            bail!(
                "{}: unknown key {key:?} for {}",
                path.display(),
                sub.get_name()
            );
        }
        let flag = format!("--{key}");
        if !given(&argv, &flag) {
            merged.push(flag);
            merged.push(value);
        }
    }
    Ok(merged)
}
