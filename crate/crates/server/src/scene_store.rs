//! Content-addressed scene storage.
//!
//! A scene id is a SHA-256 digest over the uploaded manifest (if any) and
//! every file's name and bytes in upload order, so repeating an upload
//! yields the same id. Scenes live in memory and, when a directory is
//! configured, on disk as `<dir>/<id>/manifest.json` plus the PLY files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};
use splat4d_core::splat_model::{
    load_manifest, parse_ply, Scene, SceneError, SequenceManifest, DEFAULT_SOURCE_FPS,
};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum UploadError {
    #[error("upload contains no PLY files")]
    NoFiles,
    #[error("file name `{0}` is not a plain file name")]
    BadFileName(String),
    #[error("file `{0}` uploaded twice")]
    DuplicateFile(String),
    #[error("{file}: {message}")]
    Ply {
        file: String,
        offset: Option<usize>,
        message: String,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest references `{0}`, which was not uploaded")]
    MissingFrame(String),
    #[error("storing scene: {0}")]
    Io(#[from] std::io::Error),
}

impl UploadError {
    pub fn code(&self) -> &'static str {
        match self {
            UploadError::NoFiles => "no_files",
            UploadError::BadFileName(_) => "bad_file_name",
            UploadError::DuplicateFile(_) => "duplicate_file",
            UploadError::Ply { .. } => "invalid_ply",
            UploadError::Manifest(_) => "invalid_manifest",
            UploadError::MissingFrame(_) => "missing_frame",
            UploadError::Io(_) => "storage_failure",
        }
    }

    pub fn is_client_error(&self) -> bool {
        !matches!(self, UploadError::Io(_))
    }
}

#[derive(Debug)]
pub struct StoredScene {
    pub id: String,
    pub scene: Scene,
}

#[derive(Debug, Default)]
pub struct SceneStore {
    dir: Option<PathBuf>,
    scenes: RwLock<HashMap<String, Arc<StoredScene>>>,
}

fn plain_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\0'])
        && name != MANIFEST_FILE
}

/// Id of an upload; see the module docs.
pub fn content_id(files: &[(String, Vec<u8>)], manifest: Option<&str>) -> String {
    let mut hasher = Sha256::new();
    match manifest {
        Some(m) => {
            hasher.update([1u8]);
            hasher.update((m.len() as u64).to_le_bytes());
            hasher.update(m.as_bytes());
        }
        None => hasher.update([0u8]),
    }
    for (name, bytes) in files {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hasher.finalize()[..16]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl SceneStore {
    /// An in-memory store.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A store persisted under `dir`, loading every scene already there.
    /// Unreadable entries are skipped with a warning.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut scenes = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let manifest = entry.path().join(MANIFEST_FILE);
            if !manifest.is_file() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            match Scene::load(&manifest) {
                Ok(scene) => {
                    scenes.insert(id.clone(), Arc::new(StoredScene { id, scene }));
                }
                Err(e) => {
                    tracing::warn!(scene = %id, error = %e, "skipping unreadable stored scene")
                }
            }
        }
        tracing::info!(count = scenes.len(), dir = %dir.display(), "scene store opened");
        Ok(Self {
            dir: Some(dir),
            scenes: RwLock::new(scenes),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<StoredScene>> {
        self.scenes
            .read()
            .expect("scene store lock")
            .get(id)
            .cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .scenes
            .read()
            .expect("scene store lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Registers an already loaded scene under `id`, replacing any previous one.
    pub fn insert(&self, id: impl Into<String>, scene: Scene) -> Arc<StoredScene> {
        let id = id.into();
        let stored = Arc::new(StoredScene {
            id: id.clone(),
            scene,
        });
        self.scenes
            .write()
            .expect("scene store lock")
            .insert(id, Arc::clone(&stored));
        stored
    }

    /// Parses an upload of PLY files and an optional manifest. Without a
    /// manifest the files become uniformly spaced frames in upload order.
    pub fn upload(
        &self,
        files: Vec<(String, Vec<u8>)>,
        manifest: Option<String>,
    ) -> Result<Arc<StoredScene>, UploadError> {
        if files.is_empty() {
            return Err(UploadError::NoFiles);
        }
        let mut index = HashMap::new();
        for (i, (name, _)) in files.iter().enumerate() {
            if !plain_name(name) {
                return Err(UploadError::BadFileName(name.clone()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(UploadError::DuplicateFile(name.clone()));
            }
        }
        let id = content_id(&files, manifest.as_deref());
        if let Some(existing) = self.get(&id) {
            return Ok(existing);
        }

        let manifest = match &manifest {
            Some(text) => load_manifest(text).map_err(|e| UploadError::Manifest(e.to_string()))?,
            None => SequenceManifest::uniform(
                files.iter().map(|(n, _)| n.clone()).collect(),
                DEFAULT_SOURCE_FPS,
            )
            .map_err(|e| UploadError::Manifest(e.to_string()))?,
        };
        let frames = manifest
            .frames()
            .iter()
            .map(|entry| {
                let &i = index
                    .get(&entry.frame_ref)
                    .ok_or_else(|| UploadError::MissingFrame(entry.frame_ref.clone()))?;
                parse_ply(&files[i].1)
                    .map(Arc::new)
                    .map_err(|e| UploadError::Ply {
                        file: entry.frame_ref.clone(),
                        offset: e.offset(),
                        message: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, UploadError>>()?;

        if let Some(dir) = &self.dir {
            persist(&dir.join(&id), &files, &manifest)?;
        }
        let scene = Scene { manifest, frames };
        tracing::info!(scene = %id, frames = scene.frames.len(), "scene uploaded");
        Ok(self.insert(id, scene))
    }
}

fn persist(
    target: &Path,
    files: &[(String, Vec<u8>)],
    manifest: &SequenceManifest,
) -> Result<(), UploadError> {
    let staging = target.with_extension("partial");
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    for (name, bytes) in files {
        std::fs::write(staging.join(name), bytes)?;
    }
    std::fs::write(staging.join(MANIFEST_FILE), manifest.to_json())?;
    if target.exists() {
        std::fs::remove_dir_all(target)?;
    }
    std::fs::rename(&staging, target)?;
    Ok(())
}

/// Loads a scene for the command line: a `.ply` file, a manifest, or a
/// directory holding `manifest.json`.
pub fn load_scene_path(path: &Path) -> Result<Scene, SceneError> {
    if path.is_dir() {
        Scene::load(&path.join(MANIFEST_FILE))
    } else {
        Scene::load(path)
    }
}
