//! File helpers: JSON / JSONL reading and writing, atomic replacement and
//! content hashing.

use std::fs::{self, File};
use std::io::{self as stdio, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: stdio::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    /// Stored content disagrees with its recorded id, hash or count.
    #[error("{path}: {message}")]
    Integrity { path: PathBuf, message: String },
}

impl IoError {
    pub fn io(path: &Path, source: stdio::Error) -> IoError {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn invalid(path: &Path, message: impl std::fmt::Display) -> IoError {
        IoError::Invalid { path: path.to_path_buf(), message: message.to_string() }
    }

    pub fn integrity(path: &Path, message: impl std::fmt::Display) -> IoError {
        IoError::Integrity { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(out: W, items: &[T]) -> Result<(), IoError> {
    let mut out = BufWriter::new(out);
    let p = Path::new("<stream>");
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| IoError::Parse { path: p.into(), line: 0, source: e })?;
        out.write_all(b"\n").map_err(|e| IoError::io(p, e))?;
    }
    out.flush().map_err(|e| IoError::io(p, e))
}

pub fn to_jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("value serializes");
        buf.push(b'\n');
    }
    buf
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(input: R, path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| IoError::Parse { path: path.into(), line: i + 1, source: e })?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let f = File::open(path).map_err(|e| IoError::io(path, e))?;
    read_jsonl(BufReader::new(f), path)
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    write_atomic(path, &to_jsonl_bytes(items))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::Parse { path: path.into(), line: 0, source: e })
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Appends one JSON line to `path`, creating it if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<(), IoError> {
    ensure_parent(path)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| IoError::io(path, e))?;
    let mut line = serde_json::to_vec(item).expect("value serializes");
    line.push(b'\n');
    f.write_all(&line).map_err(|e| IoError::io(path, e))
}

/// Writes to a sibling temp file, fsyncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    ensure_parent(path)?;
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp).map_err(|e| IoError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| IoError::io(&tmp, e))?;
        f.sync_all().map_err(|e| IoError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".tmp{}", std::process::id()));
    s.into()
}

pub fn ensure_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
