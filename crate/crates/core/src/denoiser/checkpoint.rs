// SPDX-License-Identifier: Apache-2.0

//! Checkpoint files.
//!
//! ```text
//! "PGCK" | u16 version | u32 len | config JSON | u32 tensor count
//! per tensor: u16 name len | name | u8 ndim | u32 dims... | f64 data...
//! ```
//!
//! All integers and floats little-endian.

use serde::{Deserialize, Serialize};

use super::net::{NetConfig, NetParams, Tensor};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PGCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub net: NetConfig,
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleConfig,
    pub params: NetParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = CheckpointConfig {
            net: self.params.config,
            schedule: self.schedule,
        };
        let json = serde_json::to_vec(&cfg)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.tensors.len() as u32).to_le_bytes());
        for t in &self.params.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing PGCK header".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let cfg: CheckpointConfig = serde_json::from_slice(r.take(len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        let params = NetParams {
            config: cfg.net,
            tensors,
        };
        params.validate()?;
        cfg.schedule.build()?;
        Ok(Checkpoint {
            schedule: cfg.schedule,
            params,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
