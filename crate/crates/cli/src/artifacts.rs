//! Artifact writers. Every artifact carries the tool version, the config
//! hash and the seed: CSVs in a leading `#` comment line, JSON files in a
//! `provenance` object.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: Option<u64>) -> Self {
        Provenance { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), config_sha256, seed }
    }

    pub fn comment(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!("{} {} config_sha256={} seed={seed}", self.tool, self.version, self.config_sha256)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub struct OutDir {
    dir: PathBuf,
    pub provenance: Provenance,
}

impl OutDir {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("{}: cannot create output directory", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), provenance })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("{}: cannot write", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// Pretty JSON with `body`'s fields next to the provenance object.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&Envelope { provenance: &self.provenance, body })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV with a provenance comment, a header and string rows.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut buf = format!("# {}\n", self.provenance.comment()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    /// Runs a writer from the core library against an in-memory buffer.
    pub fn with_writer(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> jnd_core::Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

/// Shortest round-trip decimal; empty for missing values.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
