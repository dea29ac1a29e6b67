//! Run manifest: effective configuration, seed, tool version, timestamps and
//! a SHA-256 checksum for every output file. A run is reproducible from its
//! manifest alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub struct Manifest {
    command: String,
    seed: u64,
    started_utc: String,
    config_snapshot: String,
    outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            started_utc: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
            config_snapshot: config.serialize(),
            outputs: Vec::new(),
        }
    }

    /// Register an output file and record its checksum.
    pub fn add_output(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::read(path)
            .with_context(|| format!("reading output {} for checksum", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push((name, hex));
        Ok(())
    }

    /// Write `manifest.txt` into the output directory and return its path.
    pub fn finish(self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "manifest.version = 1");
        let _ = writeln!(text, "tool.name = levex");
        let _ = writeln!(text, "tool.version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "run.command = {}", self.command);
        let _ = writeln!(text, "run.seed = {}", self.seed);
        let _ = writeln!(text, "run.started_utc = {}", self.started_utc);
        let _ = writeln!(
            text,
            "run.finished_utc = {}",
            Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
        );
        for line in self.config_snapshot.lines() {
            let _ = writeln!(text, "config.{line}");
        }
        for (name, hash) in &self.outputs {
            let _ = writeln!(text, "output.{name}.sha256 = {hash}");
        }
        let path = out_dir.join("manifest.txt");
        fs::write(&path, text)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
