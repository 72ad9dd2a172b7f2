//! Per-run manifest written to `<out>/manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    /// SHA-256 of the config file bytes, or of the default config when no
    /// file was given.
    pub config_sha256: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Vec<String>,
    pub exit_code: Option<i32>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn begin(
        command: &str,
        config_path: Option<&Path>,
        config_bytes: &[u8],
        seeds: Vec<u64>,
        out_dir: &Path,
    ) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_sha256: sha256_hex(config_bytes),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            out_dir: out_dir.display().to_string(),
            started_unix: now(),
            finished_unix: None,
            outputs: Vec::new(),
            exit_code: None,
        }
    }

    pub fn path(&self) -> PathBuf {
        Path::new(&self.out_dir).join("manifest.json")
    }

    /// Resolves `name` under the output directory and records it.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        Path::new(&self.out_dir).join(name)
    }

    pub fn write(&self) -> std::io::Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(self.path(), json + "\n")
    }

    pub fn finish(&mut self, exit_code: i32) -> std::io::Result<()> {
        self.finished_unix = Some(now());
        self.exit_code = Some(exit_code);
        self.write()
    }
}
