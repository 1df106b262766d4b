//! Config files: a TOML table per subcommand whose keys are long flag names.
//!
//! ```toml
//! [train]
//! corpus = "data/train.txt"
//! steps = 500
//! ```
//!
//! Values are spliced into the argument list before parsing unless the same
//! flag is already present, so command-line flags win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Global options that consume the following argument.
const GLOBAL_VALUED: [&str; 2] = ["--config", "--jobs"];

fn flag_value(args: &[OsString], flag: &str) -> Option<String> {
    let eq = format!("{flag}=");
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == flag {
            return it.next().map(|v| v.to_string_lossy().into_owned());
        }
        if let Some(v) = a.strip_prefix(&eq) {
            return Some(v.to_string());
        }
    }
    None
}

fn subcommand_index(args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&a.as_ref()) {
            i += 2;
            continue;
        }
        if !a.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&eq)
    })
}

fn render(key: &str, v: &toml::Value) -> Result<Option<String>> {
    Ok(Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(true) => return Ok(None),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| match x {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                _ => bail!("config key {key}: unsupported array element {x}"),
            })
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => bail!("config key {key}: unsupported value {v}"),
    }))
}

/// Returns `args` with the config file's entries for the chosen subcommand added.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = flag_value(&args, "--config") else {
        return Ok(args);
    };
    let Some(sub) = subcommand_index(&args).map(|i| args[i].to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {path}"))?;
    let Some(section) = doc.get(&sub).or_else(|| doc.get(&sub.replace('-', "_"))) else {
        return Ok(args);
    };
    let Some(table) = section.as_table() else {
        bail!("config {path}: [{sub}] must be a table");
    };
    let mut out = args;
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(&out, &flag) {
            continue;
        }
        if matches!(value, toml::Value::Boolean(false)) {
            continue;
        }
        out.push(flag.into());
        if let Some(v) = render(key, value)? {
            out.push(v.into());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nsteps = 5\nlr = 0.5\nk_grid = [1, 2]\nquiet = true\noff = false\n").unwrap();
        let args = os(&["coboost", "--config", p.to_str().unwrap(), "train", "--steps", "9"]);
        let merged: Vec<String> = merge_config(args).unwrap().iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(merged.iter().filter(|a| *a == "--steps").count(), 1);
        assert!(merged.windows(2).any(|w| w[0] == "--lr" && w[1] == "0.5"));
        assert!(merged.windows(2).any(|w| w[0] == "--k-grid" && w[1] == "1,2"));
        assert!(merged.contains(&"--quiet".to_string()));
        assert!(!merged.contains(&"--off".to_string()));
    }

    #[test]
    fn no_config_is_passthrough() {
        let args = os(&["coboost", "train", "--steps", "1"]);
        assert_eq!(merge_config(args.clone()).unwrap(), args);
    }
}
