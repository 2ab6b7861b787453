//! Timestamped run directories and their content-hashed file manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run-manifest.json";

pub struct RunDir {
    path: PathBuf,
    command: String,
    seed: u64,
    created: String,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    created: &'a str,
    files: Vec<FileEntry>,
}

impl RunDir {
    /// Creates `<root>/<YYYYmmddTHHMMSS>-seed<seed>`, adding a numeric suffix
    /// if that name is taken.
    pub fn create(root: &Path, command: &str, seed: u64) -> Result<Self> {
        let now = chrono::Local::now();
        let stamp = now.format("%Y%m%dT%H%M%S").to_string();
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let base = format!("{stamp}-seed{seed}");
        let mut path = root.join(&base);
        let mut n = 1;
        // create_dir is the existence check, so concurrent runs never share a directory.
        loop {
            match fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    path = root.join(format!("{base}-{n}"));
                    n += 1;
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        Ok(RunDir {
            path,
            command: command.to_string(),
            seed,
            created: now.to_rfc3339(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write(&self, rel: &str, content: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Hashes every file under the run directory into `run-manifest.json`.
    pub fn finish(&self) -> Result<PathBuf> {
        let mut files = Vec::new();
        collect(&self.path, &self.path, &mut files)?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: &self.command,
            seed: self.seed,
            created: &self.created,
            files,
        };
        self.write(RUN_MANIFEST, serde_json::to_string_pretty(&manifest)? + "\n")
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == RUN_MANIFEST {
            continue;
        }
        let bytes = fs::read(&path).with_context(|| format!("hashing {}", path.display()))?;
        out.push(FileEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
