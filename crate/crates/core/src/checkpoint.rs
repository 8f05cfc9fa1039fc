//! Checkpoint container: a JSON header (shape registry, version tag, RNG
//! seed) on the first line, followed by raw little-endian f64 payloads per
//! named parameter, in header order.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::ParamSet;
use crate::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    seed: u64,
    epoch: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub epoch: u64,
    pub params: ParamSet,
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let header = Header {
        version: CONTAINER_VERSION,
        kind: ckpt.kind.clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        params: ckpt
            .params
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| ParamEntry { name: name.clone(), shape: ckpt.params.shape(i).to_vec() })
            .collect(),
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    for i in 0..ckpt.params.len() {
        for v in ckpt.params.get(i) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    if header.version != CONTAINER_VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {}", header.version)));
    }
    let mut params = ParamSet::new();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        reader.read_exact(&mut buf).map_err(|_| {
            Error::BadCheckpoint(format!("truncated payload for parameter {}", entry.name))
        })?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(&entry.name, entry.shape.clone(), data);
    }
    Ok(Checkpoint { kind: header.kind, seed: header.seed, epoch: header.epoch, params })
}
