use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FilterError, Result};

/// One output file with its size and SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| FilterError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| FilterError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| FilterError::io(&tmp, e))?;
    f.sync_all().map_err(|e| FilterError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FilterError::io(path, e))
}

/// Writes `bytes` to `dir/name` and returns its inventory entry.
pub fn write_entry(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry> {
    write_atomic(&dir.join(name), bytes)?;
    Ok(FileEntry {
        path: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    })
}

/// Recomputes the checksum of every entry under `dir`; returns the mismatches.
pub fn verify_inventory(dir: &Path, files: &[FileEntry]) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for entry in files {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| FilterError::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 || bytes.len() as u64 != entry.bytes {
            bad.push(entry.path.clone());
        }
    }
    Ok(bad)
}

/// A CSV writer into memory with LF line endings.
pub(crate) fn csv_buffer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| FilterError::io("<csv buffer>", e.into_error()))
}

pub(crate) fn csv_err(e: csv::Error) -> FilterError {
    FilterError::io("<csv buffer>", std::io::Error::other(e))
}
