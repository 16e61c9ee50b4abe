use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use asgfit::loss::LossBreakdown;
use asgfit::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to audit and re-run one command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub argv: Vec<String>,
    pub invocation: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<f64>,
    pub status: String,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(invocation: &Command) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        ManifestBuilder {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                argv: std::env::args().collect(),
                invocation: invocation.clone(),
                config: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix,
                wall_clock_seconds: 0.0,
                frames: Vec::new(),
                exposure: None,
                status: "ok".to_string(),
            },
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.manifest.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn config(&mut self, config: impl Serialize) -> Result<()> {
        self.manifest.config = Some(serde_json::to_value(config)?);
        Ok(())
    }

    pub fn frames(&mut self, frames: Vec<LossBreakdown>) {
        self.manifest.frames = frames;
    }

    pub fn exposure(&mut self, exposure: f64) {
        self.manifest.exposure = Some(exposure);
    }

    pub fn status(&mut self, status: impl Into<String>) {
        self.manifest.status = status.into();
    }

    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(self.manifest)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// `dir/name.ext` → `dir/name.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
