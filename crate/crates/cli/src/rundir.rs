use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use blt_core::{Error, Result};

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Artifact directory `<root>/<command>-<hash16>-<unix_ms>`, held under a lock
/// file for as long as this value lives.
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    /// Create the directory for `(command, hash)`. An earlier run with the same hash
    /// is refused unless `overwrite` is set, in which case it is replaced.
    pub fn create(root: &Path, command: &str, hash: &str, overwrite: bool) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        let prefix = format!("{command}-{}-", &hash[..16]);
        let mut existing = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| io(root, e))? {
            let entry = entry.map_err(|e| io(root, e))?;
            if entry.file_name().to_string_lossy().starts_with(&prefix) {
                existing.push(entry.path());
            }
        }
        for old in &existing {
            if old.join(".lock").exists() {
                return Err(Error::Config(format!("run directory {} is locked by another process", old.display())));
            }
        }
        if !existing.is_empty() {
            if !overwrite {
                return Err(Error::Config(format!(
                    "a run with this configuration already exists at {}; pass --overwrite to replace it",
                    existing[0].display()
                )));
            }
            for old in &existing {
                fs::remove_dir_all(old).map_err(|e| io(old, e))?;
            }
        }
        let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let path = root.join(format!("{prefix}{millis}"));
        fs::create_dir(&path).map_err(|e| io(&path, e))?;
        let lock = path.join(".lock");
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| io(&lock, e))?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunDir { path, lock })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Write `contents` to `name` atomically via a temporary sibling.
    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let target = self.file(name);
        let tmp = self.file(&format!(".{name}.tmp"));
        fs::write(&tmp, contents).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| io(&target, e))?;
        Ok(target)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HASH: &str = "0123456789abcdef0123456789abcdef";

    #[test]
    fn same_hash_is_refused_then_replaced_with_overwrite() {
        let root = tempfile::tempdir().unwrap();
        let first = RunDir::create(root.path(), "flops", HASH, false).unwrap();
        first.write("a.txt", "x").unwrap();
        assert!(RunDir::create(root.path(), "flops", HASH, true).is_err());
        drop(first);
        assert!(RunDir::create(root.path(), "flops", HASH, false).is_err());
        let second = RunDir::create(root.path(), "flops", HASH, true).unwrap();
        assert!(!second.file("a.txt").exists());
        assert!(second.file(".lock").exists());
        assert!(RunDir::create(root.path(), "patch", HASH, false).is_ok());
    }
}
