use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::StoreError;

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    kind: &'a str,
    #[serde(borrow)]
    payload: &'a RawValue,
    crc: String,
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// Serialize one log line (without the trailing newline).
pub fn encode_line<T: Serialize>(kind: &str, payload: &T) -> Result<String, StoreError> {
    let raw = serde_json::to_string(payload).map_err(|e| StoreError::Encode(e.to_string()))?;
    let raw = RawValue::from_string(raw).map_err(|e| StoreError::Encode(e.to_string()))?;
    let line = Line {
        kind,
        crc: crc_hex(raw.get().as_bytes()),
        payload: &raw,
    };
    serde_json::to_string(&line).map_err(|e| StoreError::Encode(e.to_string()))
}

/// A line that could not be used, with its 1-based number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RawRecord {
    pub line: usize,
    pub kind: String,
    pub payload: String,
}

/// Read every intact line. Lines that fail to parse or whose checksum does
/// not match are reported and skipped.
pub fn read_lines(path: &Path) -> Result<(Vec<RawRecord>, Vec<LoadIssue>), StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let number = i + 1;
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<'_> = match serde_json::from_str(&line) {
            Ok(l) => l,
            Err(e) => {
                tracing::warn!(path = %path.display(), line = number, error = %e, "skipping unreadable record");
                issues.push(LoadIssue {
                    line: number,
                    message: format!("unreadable record: {e}"),
                });
                continue;
            }
        };
        if crc_hex(parsed.payload.get().as_bytes()) != parsed.crc {
            tracing::warn!(path = %path.display(), line = number, "skipping record with checksum mismatch");
            issues.push(LoadIssue {
                line: number,
                message: "checksum mismatch".into(),
            });
            continue;
        }
        records.push(RawRecord {
            line: number,
            kind: parsed.kind.to_string(),
            payload: parsed.payload.get().to_string(),
        });
    }
    Ok((records, issues))
}

/// Exclusive appender for one log. Holds `<log>.lock` until dropped.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    path: PathBuf,
    lock: PathBuf,
}

impl LogWriter {
    pub fn open(path: &Path, lock: &Path) -> Result<Self, StoreError> {
        match OpenOptions::new().write(true).create_new(true).open(lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Locked(lock.to_path_buf()));
            }
            Err(e) => return Err(StoreError::io(lock, e)),
        }
        let file = match OpenOptions::new().create(true).append(true).open(path) {
            Ok(f) => f,
            Err(e) => {
                let _ = std::fs::remove_file(lock);
                return Err(StoreError::io(path, e));
            }
        };
        let mut writer = LogWriter {
            file,
            path: path.to_path_buf(),
            lock: lock.to_path_buf(),
        };
        writer.terminate_partial_line()?;
        Ok(writer)
    }

    /// A crash can leave a final line without its newline; start the next
    /// record on a fresh line so only the torn one is lost.
    fn terminate_partial_line(&mut self) -> Result<(), StoreError> {
        let bytes = std::fs::read(&self.path).map_err(|e| StoreError::io(&self.path, e))?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            self.file.write_all(b"\n").map_err(|e| StoreError::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn append<T: Serialize>(&mut self, kind: &str, payload: &T) -> Result<(), StoreError> {
        let mut line = encode_line(kind, payload)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| StoreError::io(&self.path, e))
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        self.file.sync_data().map_err(|e| StoreError::io(&self.path, e))
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        let _ = self.file.sync_data();
        let _ = std::fs::remove_file(&self.lock);
    }
}
