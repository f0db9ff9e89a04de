//! Binary model snapshots.
//!
//! Layout: magic "HFBM", format version (u16 LE), a length-prefixed
//! key=value config block, then one record per tensor until end of file:
//! name length (u32 LE), name bytes, rank (u32 LE), extents (u32 LE each),
//! and the values as 32-bit little-endian floats. Tensors are written in
//! name order, so identical models always serialize identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hfbm_adiff::{ParamModule, Scalar, Tensor};

use crate::config::ModelConfig;
use crate::model::MaeModel;
use crate::MaeError;

const MAGIC: &[u8; 4] = b"HFBM";
const VERSION: u16 = 1;

/// Serialize the model plus its training step counter.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &MaeModel<T>,
    step: u64,
) -> Result<(), MaeError> {
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    model.visit_tensors(&mut |name, _, t| {
        let values: Vec<f32> = t.data().iter().map(|v| v.to_f64() as f32).collect();
        tensors.insert(name.to_string(), (t.shape().to_vec(), values));
    });

    let mut config_block = model.config.fingerprint();
    config_block.push_str(&format!("step={step}\n"));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_block.len() as u32).to_le_bytes());
    out.extend_from_slice(config_block.as_bytes());
    for (name, (shape, values)) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], MaeError> {
        if self.pos + n > self.buf.len() {
            return Err(MaeError::Checkpoint(format!(
                "file truncated reading {what} at byte {}",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, MaeError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, MaeError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Read back a checkpoint: the model it describes and the stored step
/// counter. The file must carry every tensor the architecture requires,
/// with matching shapes, and nothing else.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(MaeModel<T>, u64), MaeError> {
    let buf = fs::read(path)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(MaeError::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(MaeError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_len = c.u32("config length")? as usize;
    let config_text = std::str::from_utf8(c.take(config_len, "config block")?)
        .map_err(|_| MaeError::Checkpoint("config block is not UTF-8".into()))?;
    let (config, step) = parse_config_block(config_text)?;

    let mut stored: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    while !c.at_end() {
        let name_len = c.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| MaeError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("tensor extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4, "tensor values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if stored.insert(name.clone(), (shape, values)).is_some() {
            return Err(MaeError::Checkpoint(format!("duplicate tensor {name:?}")));
        }
    }

    let mut model: MaeModel<T> = MaeModel::new(config, 0);
    let mut errors = Vec::new();
    let mut used = 0usize;
    model.visit_tensors_mut(&mut |name, _, tensor| {
        match stored.get(name) {
            None => errors.push(format!("missing tensor {name:?}")),
            Some((shape, values)) => {
                if shape != tensor.shape() {
                    errors.push(format!(
                        "tensor {name:?} has shape {shape:?}, expected {:?}",
                        tensor.shape()
                    ));
                } else {
                    let fresh: Vec<T> =
                        values.iter().map(|&v| T::from_f64(v as f64)).collect();
                    *tensor = Tensor::new(shape.clone(), fresh);
                    used += 1;
                }
            }
        }
    });
    if used != stored.len() && errors.is_empty() {
        let mut known = std::collections::BTreeSet::new();
        model.visit_tensors(&mut |name, _, _| {
            known.insert(name.to_string());
        });
        for name in stored.keys() {
            if !known.contains(name) {
                errors.push(format!("unexpected tensor {name:?}"));
            }
        }
    }
    if !errors.is_empty() {
        return Err(MaeError::Checkpoint(errors.join("; ")));
    }
    Ok((model, step))
}

/// Config and step counter of a checkpoint, without loading tensors.
pub fn read_checkpoint_config(path: &Path) -> Result<(ModelConfig, u64), MaeError> {
    let buf = fs::read(path)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(MaeError::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(MaeError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_len = c.u32("config length")? as usize;
    let text = std::str::from_utf8(c.take(config_len, "config block")?)
        .map_err(|_| MaeError::Checkpoint("config block is not UTF-8".into()))?;
    parse_config_block(text)
}

fn parse_config_block(text: &str) -> Result<(ModelConfig, u64), MaeError> {
    let mut step = None;
    let mut config_lines = String::new();
    for line in text.lines() {
        if let Some(value) = line.strip_prefix("step=") {
            step = Some(value.parse::<u64>().map_err(|e| {
                MaeError::Checkpoint(format!("bad step counter {value:?}: {e}"))
            })?);
        } else {
            config_lines.push_str(line);
            config_lines.push('\n');
        }
    }
    let step = step.ok_or_else(|| MaeError::Checkpoint("config block lacks step counter".into()))?;
    let config = ModelConfig::from_fingerprint(&config_lines)?;
    Ok((config, step))
}
