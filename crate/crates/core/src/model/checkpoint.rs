//! Binary checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DFDC"                     magic
//! u32                        format version
//! u64                        construction seed
//! u32 + bytes                model config, canonical `model.key = value` text
//! u32                        tensor count
//! per tensor:
//!   u32 + bytes              name
//!   u32                      rank
//!   u32 * rank               dims
//!   f32 * prod(dims)         values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::crnn::{build_crnn, Crnn};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DFDC";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Crnn) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    write_bytes(&mut out, model.config.to_canonical_text().as_bytes());
    let tensors: Vec<(String, &Tensor)> = model
        .named_params()
        .into_iter()
        .chain(model.named_buffers())
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        write_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &Crnn, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Crnn> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

/// Loads and additionally requires the stored config to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Crnn> {
    let model = load_checkpoint(path)?;
    if &model.config != expected {
        let diff: Vec<String> = model
            .config
            .to_canonical_text()
            .lines()
            .zip(expected.to_canonical_text().lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("stored `{a}` vs expected `{b}`"))
            .collect();
        return Err(Error::CheckpointMismatch(diff.join("; ")));
    }
    Ok(model)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Crnn> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let seed = r.u64()?;
    let text = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::CorruptCheckpoint("config block is not UTF-8".into()))?;
    let pairs = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config line {l:?}")))?;
            let k = k.trim();
            let k = k
                .strip_prefix("model.")
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config key {k:?}")))?;
            Ok((k.to_string(), v.trim().to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig::from_pairs(&pairs)
        .map_err(|e| Error::CorruptCheckpoint(format!("stored config invalid: {e}")))?;
    let mut model = build_crnn(&config, seed)?;

    let count = r.u32()? as usize;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        stored.push((name, dims, data));
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }

    let mut slots: Vec<(String, &mut Tensor)> = Vec::new();
    {
        let Crnn {
            conv1,
            dyn_layers,
            norms,
            grus,
            strong_head,
            weak_head,
            ..
        } = &mut model;
        // Borrow-split mirror of named_params + named_buffers.
        slots.push(("conv1.weight".into(), conv1));
        for (i, l) in dyn_layers.iter_mut().enumerate() {
            for (name, t) in l.named_mut() {
                slots.push((format!("conv{}.{name}", i + 2), t));
            }
        }
        let mut buffers = Vec::new();
        for (i, n) in norms.iter_mut().enumerate() {
            slots.push((format!("bn{}.gamma", i + 1), &mut n.gamma));
            slots.push((format!("bn{}.beta", i + 1), &mut n.beta));
            buffers.push((format!("bn{}.running_mean", i + 1), &mut n.running_mean));
            buffers.push((format!("bn{}.running_var", i + 1), &mut n.running_var));
        }
        for (i, (f, b)) in grus.iter_mut().enumerate() {
            for (dir, p) in [("fwd", f), ("bwd", b)] {
                for (name, t) in p.named_mut() {
                    slots.push((format!("gru{}.{dir}.{name}", i + 1), t));
                }
            }
        }
        slots.push(("strong.weight".into(), &mut strong_head.weight));
        slots.push(("strong.bias".into(), &mut strong_head.bias));
        slots.push(("weak_att.weight".into(), &mut weak_head.weight));
        slots.push(("weak_att.bias".into(), &mut weak_head.bias));
        slots.extend(buffers);
    }
    if slots.len() != stored.len() {
        return Err(Error::CheckpointMismatch(format!(
            "config implies {} tensors, file has {}",
            slots.len(),
            stored.len()
        )));
    }
    for ((name, dims, data), (slot_name, slot)) in stored.into_iter().zip(slots) {
        if name != slot_name {
            return Err(Error::CheckpointMismatch(format!(
                "expected tensor {slot_name:?}, found {name:?}"
            )));
        }
        if dims != slot.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {name}: stored shape {dims:?}, model expects {:?}",
                slot.shape()
            )));
        }
        *slot = Tensor::from_vec(&dims, data)?;
    }
    Ok(model)
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}
