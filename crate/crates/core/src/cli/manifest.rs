use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use capalign::{file_sha256, write_atomic, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Serialize)]
pub struct Fingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: Value,
    pub inputs: Vec<Fingerprint>,
    pub outputs: Vec<String>,
    pub started_unix: f64,
    pub wall_clock_secs: f64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects what a command read and wrote; finished into one manifest.
pub struct Recorder {
    started: Instant,
    manifest: RunManifest,
    dest: Option<PathBuf>,
}

impl Recorder {
    pub fn new(argv: Vec<String>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Recorder {
            started: Instant::now(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: argv,
                config: Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix,
                wall_clock_secs: 0.0,
                exit_code: 0,
                error: None,
            },
            dest: None,
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    /// Records a content hash of `path`; a datastore or checkpoint directory
    /// is represented by its manifest or state file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let file = if path.is_dir() {
            ["manifest.json", "state.json"]
                .iter()
                .map(|f| path.join(f))
                .find(|p| p.exists())
                .unwrap_or_else(|| path.to_path_buf())
        } else {
            path.to_path_buf()
        };
        let sha256 = file_sha256(&file)?;
        self.manifest.inputs.push(Fingerprint {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Default destination, used unless `--manifest` was given.
    pub fn default_dest(&mut self, path: PathBuf) {
        self.dest.get_or_insert(path);
    }

    pub fn set_dest(&mut self, path: PathBuf) {
        self.dest = Some(path);
    }

    /// Writes the manifest to its destination, or to stderr without one.
    pub fn finish(mut self, exit_code: i32, error: Option<String>) -> std::io::Result<()> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        self.manifest.exit_code = exit_code;
        self.manifest.error = error;
        let bytes = serde_json::to_vec_pretty(&self.manifest).map_err(std::io::Error::other)?;
        match &self.dest {
            Some(p) => write_atomic(p, &bytes).map_err(std::io::Error::other),
            None => {
                eprintln!("{}", String::from_utf8_lossy(&bytes));
                Ok(())
            }
        }
    }
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
