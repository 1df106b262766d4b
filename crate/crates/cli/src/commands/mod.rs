pub mod data;
pub mod eval;
pub mod generate;
pub mod model;

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

/// Reads a JSONL file, reporting the failing line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    coboost::tasks::read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
