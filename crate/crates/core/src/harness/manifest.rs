use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileDigest>,
    pub wall_ms: u64,
}

/// What a run did and what it produced. Only output digests take part in
/// integrity checks; wall-clock times vary between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            tool: "navlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            stages: Vec::new(),
            failed_stage: None,
        }
    }

    /// Loads `manifest.json` from `dir` and re-hashes every output.
    pub fn load_verified(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Manifest(format!("{} has no {MANIFEST_FILE}", dir.display())));
        }
        let m: RunManifest = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        for stage in &m.stages {
            for out in &stage.outputs {
                let file = dir.join(&out.path);
                let actual = digest_file(&file)
                    .map_err(|_| Error::Manifest(format!("stage `{}`: missing output {}", stage.name, out.path)))?;
                if actual != out.sha256 {
                    return Err(Error::Manifest(format!(
                        "stage `{}`: digest mismatch for {}",
                        stage.name, out.path
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &FileDigest> {
        self.stages.iter().flat_map(|s| s.outputs.iter())
    }
}

/// An output directory plus the manifest being built for it.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

/// Files a stage read and wrote, collected while it runs.
#[derive(Default)]
pub struct StageFiles {
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    root: PathBuf,
}

impl StageFiles {
    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest_file(path)?,
        });
        Ok(())
    }

    /// Writes `contents` to `root/name` and records its digest.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents.as_ref())?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_ref()),
        });
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: BTreeMap<String, String>) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: RunManifest::new(command, config),
        })
    }

    /// Runs one stage. On failure the partial manifest is written and the
    /// error is tagged with the stage name.
    pub fn stage<T>(&mut self, name: &'static str, body: impl FnOnce(&mut StageFiles) -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let mut files = StageFiles {
            root: self.root.clone(),
            ..StageFiles::default()
        };
        match body(&mut files) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    inputs: files.inputs,
                    outputs: files.outputs,
                    wall_ms: started.elapsed().as_millis() as u64,
                });
                self.manifest.save(&self.root)?;
                Ok(v)
            }
            Err(e) => {
                self.manifest.failed_stage = Some(name.to_string());
                self.manifest.save(&self.root)?;
                Err(Error::Stage {
                    stage: name,
                    source: Box::new(e),
                })
            }
        }
    }

    pub fn finish(self) -> Result<RunManifest> {
        self.manifest.save(&self.root)?;
        Ok(self.manifest)
    }
}
