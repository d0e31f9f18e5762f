use std::fs;
use std::path::Path;

use crate::error::{DapError, Result};
use crate::model::config::EncoderConfig;
use crate::model::params::{init_params, ModelParams};
use crate::numcore::Tensor;

/// Checkpoint layout: magic `DAPCKPT1`, then a length-prefixed UTF-8 JSON
/// config, then per tensor: length-prefixed name, u32 rank, u64 dims,
/// little-endian f64 payload; a CRC32 of everything after the magic trails
/// the file.
pub const MAGIC: &[u8; 8] = b"DAPCKPT1";

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    let json = serde_json::to_vec(&params.config)?;
    body.extend_from_slice(&(json.len() as u32).to_le_bytes());
    body.extend_from_slice(&json);
    for (name, t) in params.visit() {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            body.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut file = Vec::with_capacity(MAGIC.len() + body.len() + 4);
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&body);
    file.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, file)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DapError::Integrity {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, EncoderConfig)> {
    let file = fs::read(path)?;
    if file.len() < MAGIC.len() + 4 {
        return Err(DapError::Integrity {
            offset: file.len() as u64,
            msg: "file shorter than magic + checksum".into(),
        });
    }
    if &file[..MAGIC.len()] != MAGIC {
        return Err(DapError::Integrity {
            offset: 0,
            msg: "bad magic bytes".into(),
        });
    }
    let body = &file[MAGIC.len()..file.len() - 4];
    let stored_crc = u32::from_le_bytes(file[file.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(body);
    if crc != stored_crc {
        return Err(DapError::Integrity {
            offset: (file.len() - 4) as u64,
            msg: format!("CRC32 mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"),
        });
    }

    let mut cur = Cursor { buf: body, pos: 0 };
    let jlen = cur.u32("config length")? as usize;
    let jraw = cur.take(jlen, "config JSON")?;
    let config: EncoderConfig = serde_json::from_slice(jraw)?;
    config.validate()?;

    // Build a frame with the right shapes, then overwrite tensor by name.
    let mut params = init_params(&config)?;
    let expected: Vec<String> = params.visit().iter().map(|(n, _)| n.clone()).collect();
    let mut seen = Vec::new();
    while cur.pos < body.len() {
        let nlen = cur.u32("tensor name length")? as usize;
        let name = String::from_utf8(cur.take(nlen, "tensor name")?.to_vec()).map_err(|_| {
            DapError::Integrity {
                offset: cur.pos as u64,
                msg: "tensor name is not UTF-8".into(),
            }
        })?;
        let rank = cur.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("tensor dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8, "tensor payload")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut tensor = Some(Tensor::new(shape.clone(), data)?);
        for (n, t) in params.visit_mut() {
            if n == name {
                // shape must match the config-derived frame
                if t.shape() != shape.as_slice() {
                    return Err(DapError::Shape(format!(
                        "checkpoint tensor {name}: shape {:?} does not match config-derived {:?}",
                        shape,
                        t.shape()
                    )));
                }
                *t = tensor.take().unwrap();
                break;
            }
        }
        if tensor.is_some() {
            return Err(DapError::Integrity {
                offset: cur.pos as u64,
                msg: format!("unexpected tensor name {name:?}"),
            });
        }
        seen.push(name);
    }
    if seen != expected {
        return Err(DapError::Integrity {
            offset: cur.pos as u64,
            msg: format!(
                "tensor inventory mismatch: expected {} tensors, found {}",
                expected.len(),
                seen.len()
            ),
        });
    }
    Ok((params, config))
}
