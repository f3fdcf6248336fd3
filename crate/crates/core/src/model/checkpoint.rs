//! Checkpoint container.
//!
//! ```text
//! "SAUGCK01" | version u32 | json_len u32 | json {"model": ModelConfig, "meta": ..}
//! | count u32 | count x (name_len u16 | name | dtype u8 | ndim u8 | dims u32.. | data)
//! ```
//! Only dtype 0 (little-endian f32) is defined.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAUGCK01";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model<f32>, meta: &serde_json::Value) -> Result<()> {
    let header = serde_json::to_vec(&Header { model: model.config().clone(), meta: meta.clone() })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for (name, t) in params.iter() {
        buf.clear();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn take<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    fill(r, &mut b, what)?;
    Ok(b)
}

/// Returns the model and the free-form metadata stored alongside it.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Model<f32>, serde_json::Value)> {
    let magic = take::<8, _>(r, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = u32::from_le_bytes(take(r, "version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let len = u32::from_le_bytes(take(r, "header length")?) as usize;
    let mut json = vec![0u8; len];
    fill(r, &mut json, "config block")?;
    let header: Header = serde_json::from_slice(&json)?;
    let reference = Model::<f32>::new(header.model.clone(), 0)?;

    let count = u32::from_le_bytes(take(r, "tensor count")?) as usize;
    let mut params = Params::default();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(r, "tensor name")?) as usize;
        let mut name = vec![0u8; name_len];
        fill(r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let Some(id) = reference.params().find(&name) else {
            return Err(Error::UnknownTensor(name));
        };
        let [dtype, ndim] = take::<2, _>(r, &name)?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("{name}: unsupported dtype tag {dtype}")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(r, &name)?) as usize);
        }
        if shape != reference.params().get(id).shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, found {shape:?}",
                reference.params().get(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        fill(r, &mut raw, &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if params.find(&name).is_some() {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        params.push(name, Tensor::from_vec(&shape, data));
    }
    Ok((Model::from_params(header.model, params)?, header.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, meta: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, serde_json::Value)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(model: &Model<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, model, &serde_json::json!({"step": 3})).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = Model::<f32>::new(ModelConfig::micro(), 5).unwrap();
        let buf = bytes(&m);
        let (back, meta) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(meta["step"], 3);
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn rejects_unknown_tensor() {
        let m = Model::<f32>::new(ModelConfig::micro(), 5).unwrap();
        let mut buf = bytes(&m);
        // Corrupt the first tensor name ("encoder.conv0.w" -> "xncoder.conv0.w").
        let pos = buf.windows(7).position(|w| w == b"encoder").unwrap();
        buf[pos] = b'x';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::UnknownTensor(_))));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = Model::<f32>::new(ModelConfig::micro(), 5).unwrap();
        let mut buf = bytes(&m);
        let short = buf[..buf.len() - 3].to_vec();
        assert!(matches!(read_checkpoint(&mut short.as_slice()), Err(Error::Truncated(_))));
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::BadMagic { .. })));
    }
}
