use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::AnalysisConfig;
use super::HarnessError;
use crate::scoring::Decision;
use crate::template::{AttributeSet, Category};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";
const PAIRS_DIR: &str = "pairs";

/// Identity and shape of a run, written once per invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_name: String,
    pub config_hash: String,
    pub backend: String,
    pub decisions: Vec<Decision>,
    pub primary_decision: Decision,
    /// evaluated entrants, baseline included
    pub prompt_ids: Vec<String>,
    pub task_ids: Vec<String>,
    pub analysis: AnalysisConfig,
}

/// Static properties of a template entrant, as used by the analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInfo {
    pub prompt_id: String,
    pub source_task: String,
    pub category: Category,
    pub attributes: AttributeSet,
    pub length: usize,
    pub shared_tokens: usize,
}

/// Layout of a run directory `<out>/<run_name>-<hash12>/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub path: PathBuf,
    pub run_name: String,
    pub short_hash: String,
}

impl RunDir {
    pub fn new(out_dir: &Path, run_name: &str, config_hash: &str) -> Self {
        let short_hash = config_hash[..12].to_string();
        Self {
            path: out_dir.join(format!("{run_name}-{short_hash}")),
            run_name: run_name.to_string(),
            short_hash,
        }
    }

    /// Opens an existing run directory via its manifest.
    pub fn open(path: &Path) -> Result<(Self, Manifest), HarnessError> {
        let manifest_path = path.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(HarnessError::MissingRun(path.display().to_string()));
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        let dir = Self {
            path: path.to_path_buf(),
            run_name: manifest.run_name.clone(),
            short_hash: manifest.config_hash[..12].to_string(),
        };
        Ok((dir, manifest))
    }

    /// `<kind>.<run_name>.<hash12>[.<suffix>].<ext>` inside the run directory.
    pub fn artifact(&self, kind: &str, suffix: Option<&str>, ext: &str) -> PathBuf {
        let name = match suffix {
            Some(s) => format!("{kind}.{}.{}.{s}.{ext}", self.run_name, self.short_hash),
            None => format!("{kind}.{}.{}.{ext}", self.run_name, self.short_hash),
        };
        self.path.join(name)
    }

    pub fn metrics_file(&self) -> PathBuf {
        self.artifact("metrics", None, "jsonl")
    }

    pub fn predictions_file(&self) -> PathBuf {
        self.artifact("predictions", None, "jsonl")
    }

    pub fn failures_file(&self) -> PathBuf {
        self.artifact("failures", None, "jsonl")
    }

    pub fn prompts_file(&self) -> PathBuf {
        self.artifact("prompts", None, "jsonl")
    }

    pub fn pairs_dir(&self) -> PathBuf {
        self.path.join(PAIRS_DIR)
    }

    pub fn pair_file(&self, prompt_id: &str, task_id: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(prompt_id.as_bytes());
        h.update([0u8]);
        h.update(task_id.as_bytes());
        self.pairs_dir().join(format!("{}.json", &hex::encode(h.finalize())[..24]))
    }
}

/// Writes via a temporary sibling and a rename, so readers never observe a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("serializable"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::CorruptRun {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| HarnessError::CorruptRun {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}
