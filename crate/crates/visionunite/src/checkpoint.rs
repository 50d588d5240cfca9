//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "VUKP" | u32 version | u32 len | header JSON
//! u32 count | count × (u32 len | name | u32 ndim | ndim × u32 dim | f32 payload)
//! [u64 step | count × f32 m | count × f32 v]      when header.optimizer
//! 32-byte SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use visionunite_core::model::{Model, ModelConfig};
use visionunite_core::optim::OptimizerState;
use visionunite_core::train::{EpochHook, Trainer};
use visionunite_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VUKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    epoch: Option<usize>,
    optimizer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub state: Option<OptimizerState>,
    /// Zero-based epoch the checkpoint was taken after.
    pub epoch: Option<usize>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits in u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode(model: &Model, state: Option<&OptimizerState>, epoch: Option<usize>) -> Vec<u8> {
    let header = Header { model: model.config.clone(), epoch, optimizer: state.is_some() };
    let header = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(64 + model.params.numel() * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    put_u32(&mut out, model.params.len());
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, t);
    }
    if let Some(s) = state {
        out.extend_from_slice(&s.step.to_le_bytes());
        s.m.iter().chain(&s.v).for_each(|t| put_f32s(&mut out, t));
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Corrupt(format!("{} bytes is too short for a checkpoint", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Corrupt("missing VUKP magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("content hash mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version { found: version, supported: VERSION });
    }
    let len = c.u32()?;
    let header: Header =
        serde_json::from_slice(c.take(len)?).map_err(|e| Error::Corrupt(format!("config block: {e}")))?;
    let count = c.u32()?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?;
        let ndim = c.u32()?;
        let shape = (0..ndim).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        tensors.push(c.tensor(&shape)?);
        names.push(name.to_string());
    }
    let state = if header.optimizer {
        let step = c.u64()?;
        let mut read = || tensors.iter().map(|t| c.tensor(t.shape())).collect::<Result<Vec<_>>>();
        let m = read()?;
        let v = read()?;
        Some(OptimizerState { step, m, v })
    } else {
        None
    };
    if c.pos != body.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - c.pos)));
    }
    let model = Model::from_params(header.model, names, tensors)?;
    Ok(Checkpoint { model, state, epoch: header.epoch })
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, model: &Model, state: Option<&OptimizerState>, epoch: Option<usize>) -> Result<()> {
    let bytes = encode(model, state, epoch);
    let tmp = path.with_extension("vukp.tmp");
    crate::io::create(&tmp)?;
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(Error::io(path))?)
}

/// The model as it reads back from a checkpoint.
pub fn quantized(model: &Model) -> Model {
    let mut m = model.clone();
    for t in m.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    m
}

/// Saves after every epoch and keeps only the newest `keep` files.
pub struct EpochCheckpoints {
    dir: PathBuf,
    keep: usize,
    written: Vec<PathBuf>,
}

impl EpochCheckpoints {
    pub fn new(dir: impl Into<PathBuf>, keep: usize) -> Self {
        Self { dir: dir.into(), keep: keep.max(1), written: Vec::new() }
    }

    pub fn path_for(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch:04}.vukp"))
    }

    pub fn retained(&self) -> &[PathBuf] {
        &self.written
    }
}

impl EpochHook for EpochCheckpoints {
    fn on_epoch_end(&mut self, epoch: usize, trainer: &Trainer) -> visionunite_core::Result<()> {
        let path = self.path_for(epoch);
        save(&path, &trainer.model, Some(&trainer.state), Some(epoch))
            .map_err(|e| visionunite_core::Error::Validation(format!("checkpoint {}: {e}", path.display())))?;
        log::info!("epoch {epoch}: wrote {}", path.display());
        self.written.push(path);
        while self.written.len() > self.keep {
            let old = self.written.remove(0);
            if let Err(e) = fs::remove_file(&old) {
                log::warn!("could not remove {}: {e}", old.display());
            }
        }
        Ok(())
    }
}
