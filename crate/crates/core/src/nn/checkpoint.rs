//! Flat binary checkpoint container.
//!
//! All integers are little-endian `u32`, reals are little-endian `f32`.
//!
//! ```text
//! magic      8 bytes   "TACOCKPT"
//! version    u32       1
//! digest     32 bytes  SHA-256 of the config bytes
//! config     u32 length + UTF-8 JSON
//! params     u32 count, then records
//! buffers    u32 count, then records (running statistics)
//!
//! record     u32 name length, UTF-8 name, 4 x u32 shape (N, C, H, W), f32 data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::param::ParamSet;
use super::tensor::Tensor4;

pub const MAGIC: &[u8; 8] = b"TACOCKPT";
pub const VERSION: u32 = 1;

pub fn config_digest(config: &str) -> [u8; 32] {
    Sha256::digest(config.as_bytes()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub digest: [u8; 32],
    pub params: Vec<(String, Tensor4<f32>)>,
    pub buffers: Vec<(String, Tensor4<f32>)>,
}

impl Checkpoint {
    pub fn from_params(config: String, ps: &ParamSet<f32>) -> Self {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for e in ps.entries() {
            let item = (e.name.clone(), e.value.clone());
            if e.trainable {
                params.push(item);
            } else {
                buffers.push(item);
            }
        }
        Self {
            digest: config_digest(&config),
            config,
            params,
            buffers,
        }
    }

    /// Copies stored tensors into `ps`; names and shapes must match exactly.
    pub fn restore(&self, ps: &mut ParamSet<f32>) -> Result<()> {
        let stored = self.params.len() + self.buffers.len();
        if stored != ps.len() {
            return Err(Error::Version(format!(
                "checkpoint holds {stored} tensors, model expects {}",
                ps.len()
            )));
        }
        for (name, tensor) in self.params.iter().chain(&self.buffers) {
            let id = ps
                .id(name)
                .ok_or_else(|| Error::Version(format!("checkpoint tensor {name} is unknown to the model")))?;
            let dst = ps.value_mut(id);
            if dst.shape() != tensor.shape() {
                return Err(Error::Version(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(tensor.data());
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.digest)?;
        write_u32(&mut w, self.config.len())?;
        w.write_all(self.config.as_bytes())?;
        for group in [&self.params, &self.buffers] {
            write_u32(&mut w, group.len())?;
            for (name, t) in group {
                write_u32(&mut w, name.len())?;
                w.write_all(name.as_bytes())?;
                for d in t.shape() {
                    write_u32(&mut w, d)?;
                }
                let mut bytes = Vec::with_capacity(t.len() * 4);
                for v in t.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&bytes)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Version("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION as usize {
            return Err(Error::Version(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let config = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Version("checkpoint config is not UTF-8".into()))?;
        if config_digest(&config) != digest {
            return Err(Error::Version("checkpoint config digest does not match its header".into()));
        }
        let mut groups = [Vec::new(), Vec::new()];
        for group in &mut groups {
            let count = read_u32(&mut r)?;
            for _ in 0..count {
                let name = String::from_utf8(read_bytes(&mut r)?)
                    .map_err(|_| Error::Version("parameter name is not UTF-8".into()))?;
                let mut shape = [0usize; 4];
                for d in &mut shape {
                    *d = read_u32(&mut r)?;
                }
                let len: usize = shape.iter().product();
                let mut raw = vec![0u8; len * 4];
                r.read_exact(&mut raw)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                group.push((name, Tensor4::from_vec(shape, data)?));
            }
        }
        let [params, buffers] = groups;
        Ok(Self {
            config,
            digest,
            params,
            buffers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Ingest {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Self::read_from(bytes.as_slice())
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Param(format!("{v} does not fit the checkpoint format")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
