//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TIPGNNCK"
//! version  u32
//! config   u32 length + UTF-8 `key=value` lines
//! count    u32
//! count × { u32 name length, name, u32 rank, rank × u64 dims, f64 data }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TipGnn, TipGnnConfig};
use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TIPGNNCK";
const VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
}

fn put_u32(w: &mut impl Write, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
}

pub fn write_checkpoint(model: &TipGnn, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let text: String = model
        .config()
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    put_u32(w, text.len())?;
    w.write_all(text.as_bytes())?;
    put_u32(w, model.params().len())?;
    for (_, name, t) in model.params().iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &dim in t.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &TipGnn, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn decode_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = get_u32(r)?;
    let text = get_string(r, len)?;
    let config = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Checkpoint(format!("bad config line `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = get_u32(r)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(r)?;
        let name = get_string(r, len)?;
        let rank = get_u32(r)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push((name, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { config, params })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&mut BufReader::new(File::open(path)?))
}

impl Checkpoint {
    pub fn model_config(&self) -> Result<TipGnnConfig> {
        let mut cfg = TipGnnConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Rebuilds the model for `g`; every stored tensor must match the
    /// layout the config implies.
    pub fn into_model(self, g: &TemporalGraph) -> Result<TipGnn> {
        let cfg = self.model_config()?;
        let mut model = TipGnn::new(cfg, g, &mut ChaCha8Rng::seed_from_u64(0))?;
        if self.params.len() != model.params().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (name, t) in self.params {
            let id = model
                .params()
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if model.params().get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params().get(id).shape()
                )));
            }
            *model.params_mut().get_mut(id) = t;
        }
        Ok(model)
    }
}

pub fn load_checkpoint(path: &Path, g: &TemporalGraph) -> Result<TipGnn> {
    read_checkpoint(path)?.into_model(g)
}
