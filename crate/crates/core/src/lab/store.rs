use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabError, RunRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    record: RunRecord,
}

/// Append-only JSON-lines file of run records. Appends hold an exclusive
/// file lock, so several processes may share one store.
#[derive(Debug, Clone)]
pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn open(path: &Path) -> Result<Self, LabError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every readable record in file order. A line cut short by a crash is
    /// skipped; a record from another schema version is an error.
    pub fn load(&self) -> Result<Vec<RunRecord>, LabError> {
        let text = fs::read_to_string(&self.path)?;
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(raw) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("{}:{}: skipping unreadable line ({e})", self.path.display(), i + 1);
                    continue;
                }
            };
            let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
            if version != Some(SCHEMA_VERSION as u64) {
                return Err(LabError::Store {
                    line: i + 1,
                    message: format!("schema version {version:?}, expected {SCHEMA_VERSION}"),
                });
            }
            let line: Line = serde_json::from_value(value).map_err(|e| LabError::Store {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(line.record);
        }
        Ok(out)
    }

    /// Latest record per run id.
    pub fn latest(&self) -> Result<BTreeMap<String, RunRecord>, LabError> {
        Ok(self.load()?.into_iter().map(|r| (r.run_id.clone(), r)).collect())
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), LabError> {
        self.append_all(std::slice::from_ref(record))
    }

    /// Writes the records under one lock hold.
    pub fn append_all(&self, records: &[RunRecord]) -> Result<(), LabError> {
        let mut buf = String::new();
        for record in records {
            let line = Line {
                schema_version: SCHEMA_VERSION,
                record: record.clone(),
            };
            buf.push_str(&serde_json::to_string(&line)?);
            buf.push('\n');
        }
        let mut f = OpenOptions::new().read(true).append(true).open(&self.path)?;
        f.lock()?;
        let result = (|| -> std::io::Result<()> {
            // terminate a torn last line so the new record starts clean
            if ends_mid_line(&mut f)? {
                buf.insert(0, '\n');
            }
            f.write_all(buf.as_bytes())?;
            f.sync_data()
        })();
        f.unlock()?;
        result?;
        Ok(())
    }
}

fn ends_mid_line(f: &mut File) -> std::io::Result<bool> {
    let len = f.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    f.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8];
    f.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}
