//! Versioned binary container for model weights and optional optimizer
//! state. Little-endian throughout, 32-bit float payloads, CRC32 trailer.
//! Round-trips must be bit-exact.

use std::path::Path;

use crate::tensor::Tensor;
use crate::util::crc32;
use crate::{Error, Result};

use super::{Model, ModelConfig, Upsampling};

const MAGIC: &[u8; 4] = b"UMCK";
const VERSION: u32 = 1;

/// Optimizer and schedule state carried alongside the weights so training
/// can resume exactly where it stopped.
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub lr: f64,
    pub plateau_epochs: u32,
    pub best_val_si_snr: f64,
    /// First Adam moment per parameter, in parameter order.
    pub m: Vec<(String, Tensor<f32>)>,
    /// Second Adam moment per parameter, in parameter order.
    pub v: Vec<(String, Tensor<f32>)>,
}

pub fn save(path: &Path, model: &Model<f32>, train: Option<&TrainState>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_config(&mut buf, &model.config);

    let params = model.params();
    put_u32(&mut buf, params.len() as u32);
    for (name, t) in &params {
        put_tensor(&mut buf, name, t);
    }

    match train {
        None => buf.push(0),
        Some(ts) => {
            buf.push(1);
            put_u64(&mut buf, ts.step);
            put_u64(&mut buf, ts.epoch);
            put_u64(&mut buf, ts.seed);
            put_f64(&mut buf, ts.lr);
            put_u32(&mut buf, ts.plateau_epochs);
            put_f64(&mut buf, ts.best_val_si_snr);
            put_u32(&mut buf, (ts.m.len() + ts.v.len()) as u32);
            for (name, t) in &ts.m {
                put_tensor(&mut buf, &format!("m.{name}"), t);
            }
            for (name, t) in &ts.v {
                put_tensor(&mut buf, &format!("v.{name}"), t);
            }
        }
    }

    let crc = crc32(&buf);
    put_u32(&mut buf, crc);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model<f32>, Option<TrainState>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::checkpoint("file too short to be a checkpoint"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4-byte trailer"));
    let actual = crc32(body);
    if stored != actual {
        return Err(Error::checkpoint(format!(
            "checksum mismatch: trailer {stored:#010x}, contents {actual:#010x}"
        )));
    }

    let mut c = Cursor { buf: body, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::checkpoint("bad magic; not a model checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::checkpoint(format!(
            "unsupported checkpoint version {version}; this build reads {VERSION}"
        )));
    }
    let config = get_config(&mut c)?;
    config.validate()?;

    // Build the skeleton, then overwrite every tensor in declared order.
    let mut model: Model<f32> = Model::init(config, 0)?;
    let n_tensors = c.u32()? as usize;
    {
        let mut params = model.params_mut();
        if n_tensors != params.len() {
            return Err(Error::checkpoint(format!(
                "checkpoint stores {n_tensors} tensors but the config implies {}",
                params.len()
            )));
        }
        for (name, slot) in params.iter_mut() {
            let (got_name, t) = get_tensor(&mut c)?;
            if got_name != *name {
                return Err(Error::checkpoint(format!(
                    "tensor order mismatch: expected {name}, found {got_name}"
                )));
            }
            if t.shape != slot.shape {
                return Err(Error::checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape, slot.shape
                )));
            }
            **slot = t;
        }
    }

    let train = match c.u8()? {
        0 => None,
        1 => {
            let step = c.u64()?;
            let epoch = c.u64()?;
            let seed = c.u64()?;
            let lr = c.f64()?;
            let plateau_epochs = c.u32()?;
            let best_val_si_snr = c.f64()?;
            let count = c.u32()? as usize;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for _ in 0..count {
                let (name, t) = get_tensor(&mut c)?;
                if let Some(rest) = name.strip_prefix("m.") {
                    m.push((rest.to_string(), t));
                } else if let Some(rest) = name.strip_prefix("v.") {
                    v.push((rest.to_string(), t));
                } else {
                    return Err(Error::checkpoint(format!(
                        "unrecognized optimizer tensor {name}"
                    )));
                }
            }
            Some(TrainState {
                step,
                epoch,
                seed,
                lr,
                plateau_epochs,
                best_val_si_snr,
                m,
                v,
            })
        }
        other => {
            return Err(Error::checkpoint(format!(
                "invalid optimizer-state flag {other}"
            )))
        }
    };

    if c.at != c.buf.len() {
        return Err(Error::checkpoint("trailing bytes after checkpoint payload"));
    }
    Ok((model, train))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_config(buf: &mut Vec<u8>, cfg: &ModelConfig) {
    put_u32(buf, cfg.feature_channels as u32);
    put_u32(buf, cfg.window as u32);
    put_u32(buf, cfg.hop as u32);
    put_u32(buf, cfg.depth as u32);
    put_u32(buf, cfg.blocks as u32);
    put_u32(buf, cfg.sources as u32);
    put_u32(buf, cfg.states as u32);
    buf.push(match cfg.upsampling {
        Upsampling::TransposedConv => 0,
        Upsampling::NearestNeighbor => 1,
        Upsampling::Linear => 2,
    });
    put_u32(buf, cfg.bottleneck_channels as u32);
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    let name = name.as_bytes();
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name);
    buf.push(t.shape.len() as u8);
    for &d in &t.shape {
        put_u32(buf, d as u32);
    }
    for &v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::checkpoint("truncated checkpoint"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn get_config(c: &mut Cursor) -> Result<ModelConfig> {
    Ok(ModelConfig {
        feature_channels: c.u32()? as usize,
        window: c.u32()? as usize,
        hop: c.u32()? as usize,
        depth: c.u32()? as usize,
        blocks: c.u32()? as usize,
        sources: c.u32()? as usize,
        states: c.u32()? as usize,
        upsampling: match c.u8()? {
            0 => Upsampling::TransposedConv,
            1 => Upsampling::NearestNeighbor,
            2 => Upsampling::Linear,
            other => {
                return Err(Error::checkpoint(format!(
                    "invalid upsampling code {other}"
                )))
            }
        },
        bottleneck_channels: c.u32()? as usize,
    })
}

fn get_tensor(c: &mut Cursor) -> Result<(String, Tensor<f32>)> {
    let name_len = c.u16()? as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec())
        .map_err(|_| Error::checkpoint("tensor name is not valid utf-8"))?;
    let rank = c.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u32()? as usize);
    }
    let numel: usize = shape.iter().product();
    let raw = c.take(numel * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte float")))
        .collect();
    Ok((name, Tensor { shape, data }))
}
