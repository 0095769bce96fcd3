use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use dtnet::calderon::Provenance;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checksums of every artifact of a run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Provenance>,
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Integrity(format!("{} is not a valid manifest: {e}", path.display())))
    }

    /// Recomputes the checksum of each listed artifact.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        for (name, want) in &self.artifacts {
            self.verify_one(dir, name, want)?;
        }
        Ok(())
    }

    pub fn verify_file(&self, dir: &Path, name: &str) -> CliResult<()> {
        match self.artifacts.get(name) {
            Some(want) => self.verify_one(dir, name, want),
            None => Err(CliError::Integrity(format!("{name} is not listed in {}", dir.join(MANIFEST).display()))),
        }
    }

    fn verify_one(&self, dir: &Path, name: &str, want: &str) -> CliResult<()> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| {
            CliError::Integrity(format!("{} is listed in the manifest but unreadable: {e}", path.display()))
        })?;
        let got = sha256_hex(&bytes);
        if got != want {
            return Err(CliError::Integrity(format!(
                "checksum mismatch for {}: manifest has {want}, file has {got}",
                path.display()
            )));
        }
        Ok(())
    }
}

/// Exclusive marker file, removed when dropped.
#[derive(Debug)]
struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Io(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// A locked output directory and the manifest being built for it.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
    _lock: Lock,
}

impl RunDir {
    /// Entries of an existing manifest are kept when it was written for the same config.
    pub fn open(path: &Path, config_hash: &str) -> CliResult<Self> {
        fs::create_dir_all(path)?;
        let lock = Lock::acquire(path)?;
        let manifest = match Manifest::load(path)? {
            Some(m) if m.config_hash == config_hash => m,
            _ => Manifest { config_hash: config_hash.to_string(), ..Manifest::default() },
        };
        Ok(Self { path: path.to_path_buf(), manifest, _lock: lock })
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let bytes = bytes.as_ref();
        fs::write(self.path.join(name), bytes)?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(self) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(self.path.join(MANIFEST), text)?;
        Ok(())
    }
}
