//! Checkpoint directory layout:
//!
//! ```text
//! state.json            DalState, rewritten atomically as the commit point
//! store_<i>/            datastore after iteration i (store_0 is the input)
//! report_<i>.json       IterationReport of iteration i
//! progress_<i>.jsonl    per-image generation results of iteration i
//! ```

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DalConfig, DalItem, IterationReport};
use crate::error::{Error, Result};
use crate::util;

pub const STATE_FILE: &str = "state.json";
pub const STATE_VERSION: u32 = 1;

/// Threshold of an iteration whose generation has started but not finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingIteration {
    pub iteration: u32,
    pub threshold: f64,
    pub threshold_stderr: f64,
    pub threshold_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DalState {
    pub format_version: u32,
    pub config: DalConfig,
    /// Hash of the alignment map and the train/validation items.
    pub data_fingerprint: String,
    /// Completed iterations.
    pub iteration: u32,
    /// Threshold of the most recently started iteration.
    pub threshold: Option<f64>,
    pub current_k: usize,
    pub datastore_version: String,
    pub history: Vec<IterationReport>,
    pub pending: Option<PendingIteration>,
}

impl DalState {
    pub(crate) fn new(config: DalConfig, data_fingerprint: String) -> Self {
        DalState {
            format_version: STATE_VERSION,
            current_k: config.initial_k,
            config,
            data_fingerprint,
            iteration: 0,
            threshold: None,
            datastore_version: store_name(0),
            history: Vec::new(),
            pending: None,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(STATE_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: DalState =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if state.format_version != STATE_VERSION {
            return Err(Error::Version {
                what: "DAL state",
                found: state.format_version,
            });
        }
        if state.history.len() != state.iteration as usize {
            return Err(Error::Format(format!(
                "{}: {} reports for {} completed iterations",
                path.display(),
                state.history.len(),
                state.iteration
            )));
        }
        Ok(state)
    }

    pub(crate) fn save(&self, dir: &Path) -> Result<()> {
        util::write_atomic(dir.join(STATE_FILE), &serde_json::to_vec_pretty(self)?)
    }

    /// Directory of the current datastore inside checkpoint `dir`.
    pub fn store_dir(&self, dir: impl AsRef<Path>) -> PathBuf {
        dir.as_ref().join(&self.datastore_version)
    }
}

pub(crate) fn store_name(iteration: u32) -> String {
    format!("store_{iteration}")
}

pub(crate) fn report_path(dir: &Path, iteration: u32) -> PathBuf {
    dir.join(format!("report_{iteration}.json"))
}

pub(crate) fn progress_path(dir: &Path, iteration: u32) -> PathBuf {
    dir.join(format!("progress_{iteration}.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ScoredText {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Addition {
    /// Index into `ImageProgress::scored`.
    pub candidate: usize,
    /// Unit-norm embedding at store precision.
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ImageProgress {
    pub image_id: String,
    pub shortfall: usize,
    pub scored: Vec<ScoredText>,
    pub additions: Vec<Addition>,
}

/// Reads a progress file. A torn final line from an interrupted write is
/// dropped and the file rewritten without it.
pub(crate) fn read_progress(path: &Path) -> Result<Vec<ImageProgress>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut valid = 0;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let last = i + 1 == lines.len();
        match serde_json::from_str::<ImageProgress>(line.trim_end()) {
            Ok(p) if line.ends_with('\n') => {
                out.push(p);
                valid += line.len();
            }
            _ if last => break,
            Err(e) => return Err(Error::Format(format!("{} line {}: {e}", path.display(), i + 1))),
            Ok(_) => unreachable!("only the last line can lack a newline"),
        }
    }
    if valid != bytes.len() {
        util::write_atomic(path, &bytes[..valid])?;
    }
    Ok(out)
}

pub(crate) fn append_progress(path: &Path, entries: &[ImageProgress]) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

pub(crate) fn data_fingerprint(map_fingerprint: &str, train: &[DalItem], val: &[DalItem]) -> String {
    let mut h = Sha256::new();
    h.update(map_fingerprint.as_bytes());
    for (tag, items) in [(b'T', train), (b'V', val)] {
        h.update([tag]);
        h.update((items.len() as u64).to_le_bytes());
        for item in items {
            h.update((item.image_id.len() as u64).to_le_bytes());
            h.update(item.image_id.as_bytes());
            item.image.iter().for_each(|x| h.update(x.to_le_bytes()));
            match &item.references {
                None => h.update([0]),
                Some(r) => {
                    h.update([1]);
                    for (t, e) in r.references().iter().zip(r.embeddings()) {
                        h.update((t.len() as u64).to_le_bytes());
                        h.update(t.as_bytes());
                        e.iter().for_each(|x| h.update(x.to_le_bytes()));
                    }
                }
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
