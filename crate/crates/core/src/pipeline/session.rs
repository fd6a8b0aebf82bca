//! Edit sessions on disk: one directory per session holding the input
//! image, a JSON manifest and one subdirectory per run.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{artifact_files, run_edit, EditConfig, Models, RunOptions};
use crate::caption::tokenize;
use crate::io::{load_png, read_bytes, save_png, write_bytes};
use crate::{Error, Result};

pub const DATA_DIR_ENV: &str = "DM_ALIGN_DATA_DIR";

const MANIFEST: &str = "session.json";
const INPUT: &str = "input.png";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub target_caption: String,
    pub config: EditConfig,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Artifact kind → path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub refined_pixels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub source_caption: String,
    pub history: Vec<RunRecord>,
}

/// Sessions under one root directory. Edits to the same session are
/// serialized; distinct sessions run concurrently.
pub struct SessionStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

/// Run artifacts plus the session input, which lives two levels up.
fn run_artifacts(dump_latents: bool, steps: usize) -> BTreeMap<String, String> {
    let mut files = artifact_files(dump_latents, steps);
    files.insert("input".into(), format!("../../{INPUT}"));
    files
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(SessionStore { root, locks: Mutex::new(HashMap::new()) })
    }

    /// `$DM_ALIGN_DATA_DIR`, or `./dmalign-data`.
    pub fn from_env() -> Result<Self> {
        let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dmalign-data"));
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(id.to_string()).or_default().clone()
    }

    fn write_manifest(&self, m: &SessionManifest) -> Result<()> {
        let dir = self.dir(&m.id);
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        write_bytes(&tmp, &serde_json::to_vec_pretty(m)?)?;
        let dst = dir.join(MANIFEST);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(dst, e))
    }

    pub fn create(&self, image: &RgbImage, source_caption: &str) -> Result<SessionManifest> {
        tokenize(source_caption)?;
        let id = new_id();
        let dir = self.dir(&id);
        save_png(&dir.join(INPUT), image)?;
        let m = SessionManifest {
            id,
            image: INPUT.to_string(),
            width: image.width(),
            height: image.height(),
            source_caption: source_caption.to_string(),
            history: Vec::new(),
        };
        self.write_manifest(&m)?;
        Ok(m)
    }

    /// `None` for unknown (or malformed) ids.
    pub fn get(&self, id: &str) -> Result<Option<SessionManifest>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let path = self.dir(id).join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&read_bytes(&path)?)?))
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().join(MANIFEST).exists() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn input_image(&self, id: &str) -> Result<RgbImage> {
        load_png(&self.dir(id).join(INPUT))
    }

    pub fn run_dir(&self, id: &str, run_id: &str) -> PathBuf {
        self.dir(id).join("runs").join(run_id)
    }

    /// Runs an edit and appends it to the history. Caption and config are
    /// checked before a run is created; failures after that are recorded
    /// as failed runs and returned as errors. `Ok(None)` for an unknown
    /// session.
    pub fn post_edit(
        &self,
        id: &str,
        target_caption: &str,
        config: &EditConfig,
        models: &Models,
        dump_latents: bool,
    ) -> Result<Option<RunRecord>> {
        if self.get(id)?.is_none() {
            return Ok(None);
        }
        tokenize(target_caption)?;
        config.validate()?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let Some(mut manifest) = self.get(id)? else { return Ok(None) };
        let image = self.input_image(id)?;
        let run_id = format!("r{:04}-{}", manifest.history.len(), &new_id()[..8]);
        let options = RunOptions { out_dir: Some(self.run_dir(id, &run_id)), dump_latents };
        let result = run_edit(&image, &manifest.source_caption, target_caption, config, models, &options);
        let record = RunRecord {
            run_id,
            target_caption: target_caption.to_string(),
            config: config.clone(),
            status: if result.is_ok() { RunStatus::Complete } else { RunStatus::Failed },
            error: result.as_ref().err().map(|e| e.to_string()),
            artifacts: if result.is_ok() { run_artifacts(dump_latents, config.steps) } else { BTreeMap::new() },
            refined_pixels: result.as_ref().ok().map(|o| o.metrics.refined_pixels),
        };
        manifest.history.push(record.clone());
        self.write_manifest(&manifest)?;
        result.map(|_| Some(record))
    }

    /// File of one artifact kind, if the run and kind exist.
    pub fn artifact_path(&self, id: &str, run_id: &str, kind: &str) -> Result<Option<PathBuf>> {
        let Some(m) = self.get(id)? else { return Ok(None) };
        let Some(run) = m.history.iter().find(|r| r.run_id == run_id) else { return Ok(None) };
        Ok(run.artifacts.get(kind).map(|f| self.run_dir(id, run_id).join(f)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_path_safe() {
        assert!(valid_id(&new_id()));
        assert!(!valid_id("../etc"));
        assert!(!valid_id(""));
        assert!(!valid_id("a/b"));
    }
}
