//! Checkpoint container: a magic line, one JSON header line describing the
//! run, then the parameters as little-endian f32.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, TrainingSchedule, Transformer};

const MAGIC: &str = "lingolab-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schedule: Option<TrainingSchedule>,
    seed: u64,
    num_params: usize,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer<f32>,
    pub schedule: Option<TrainingSchedule>,
    pub seed: u64,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Transformer<f32>,
    schedule: Option<&TrainingSchedule>,
    seed: u64,
) -> Result<(), ModelError> {
    let header = Header {
        config: model.config().clone(),
        schedule: schedule.cloned(),
        seed,
        num_params: model.num_params(),
        dtype: "f32le".into(),
    };
    let json = serde_json::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "{json}")?;
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(&line).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(bad("unsupported dtype"));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != header.num_params * 4 {
        return Err(bad("parameter payload has the wrong length"));
    }
    let params = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Checkpoint {
        model: Transformer::from_params(header.config, params)?,
        schedule: header.schedule,
        seed: header.seed,
    })
}
