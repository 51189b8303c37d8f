//! Deterministic file emission: UTF-8, LF endings, fixed float formatting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

/// Format a float for CSV cells: 12 significant digits, stable across runs.
pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output dir {}", dir.display()))
}

pub fn write_text(path: &PathBuf, content: &str) -> anyhow::Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// A CSV body with a schema comment line and LF endings throughout.
pub struct Csv {
    buffer: String,
}

impl Csv {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        let mut buffer = String::new();
        buffer.push_str(&format!("# schema: {schema}\n"));
        buffer.push_str(&header.join(","));
        buffer.push('\n');
        Self { buffer }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buffer.push_str(&cells.join(","));
        self.buffer.push('\n');
    }

    pub fn finish(self) -> String {
        self.buffer
    }
}
