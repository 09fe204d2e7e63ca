//! Output files. Every artifact lands directly inside one output directory
//! and starts with a metadata block holding the effective configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config: RunConfig,
}

impl Metadata {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: config.command.map_or("unknown", |c| c.name()),
            seed: config.seed,
            config: config.clone(),
        }
    }

    /// `#`-prefixed header lines for CSV files.
    fn csv_preamble(&self) -> Result<String> {
        let config = serde_json::to_string(&self.config)?;
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        Ok(format!(
            "# {} {}\n# command: {}\n# seed: {}\n# config: {}\n",
            self.tool, self.version, self.command, seed, config
        ))
    }
}

pub struct OutputDir {
    root: PathBuf,
    meta: Metadata,
}

impl OutputDir {
    pub fn create(root: &Path, meta: Metadata) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), meta })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        // plain file names only, so nothing escapes the directory
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            bail!("refusing to write `{name}` outside the output directory");
        }
        Ok(self.root.join(name))
    }

    /// Writes `value` merged with a top-level `metadata` object.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name)?;
        let mut doc = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut doc {
            map.insert("metadata".into(), serde_json::to_value(&self.meta)?);
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes the metadata preamble then `header` and `rows` as CSV.
    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name)?;
        let mut buf = self.meta.csv_preamble()?.into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
        let mut file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        file.write_all(&buf)?;
        Ok(path)
    }
}

/// Formats an optional number, `NA` when absent or not finite.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => "NA".into(),
    }
}
