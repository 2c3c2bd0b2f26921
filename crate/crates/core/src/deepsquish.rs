// SPDX-License-Identifier: Apache-2.0

//! Folding a square topology matrix into a multi-channel tensor.
//!
//! Each `s x s` patch (`s = sqrt(C)`) of the matrix becomes one spatial
//! position with `C` channels; channel `c = (r mod s) * s + (col mod s)`.
//! Every bit stays its own channel, so all bits carry equal weight.
//!
//! Binary file layout (little-endian):
//!
//! | bytes     | field                         |
//! |-----------|-------------------------------|
//! | 4         | magic `DSQT`                  |
//! | 2         | version (`1`)                 |
//! | 4         | channels `C`                  |
//! | 4         | side `M`                      |
//! | `C*M*M`   | entries 0/1, channel-major    |

use crate::error::{Error, Result};
use crate::topology::Topology;

const MAGIC: &[u8; 4] = b"DSQT";
const VERSION: u16 = 1;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TopologyTensor {
    channels: usize,
    side: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for TopologyTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TopologyTensor {}x{}x{} ", self.channels, self.side, self.side)?;
        for v in &self.data {
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Integer square root of `c` when `c` is a positive perfect square.
pub fn patch_side(channels: usize) -> Option<usize> {
    if channels == 0 {
        return None;
    }
    let s = (channels as f64).sqrt().round() as usize;
    (s * s == channels).then_some(s)
}

impl TopologyTensor {
    pub fn zeros(channels: usize, side: usize) -> Result<Self> {
        TopologyTensor::from_data(channels, side, vec![0; channels * side * side])
    }

    pub fn from_data(channels: usize, side: usize, data: Vec<u8>) -> Result<Self> {
        if patch_side(channels).is_none() {
            return Err(Error::validation(format!(
                "channel count {channels} is not a perfect square"
            )));
        }
        if side == 0 || data.len() != channels * side * side {
            return Err(Error::Size(format!(
                "expected {} entries for {channels}x{side}x{side}, got {}",
                channels * side * side,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::validation(format!("non-binary entry at index {i}")));
        }
        Ok(TopologyTensor {
            channels,
            side,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Spatial side length `M`.
    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Side length of the source matrix, `sqrt(C) * M`.
    pub fn matrix_side(&self) -> usize {
        patch_side(self.channels).unwrap() * self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Same shape, different entries. Entries are not re-validated beyond length.
    pub(crate) fn with_data(&self, data: Vec<u8>) -> TopologyTensor {
        debug_assert_eq!(data.len(), self.data.len());
        TopologyTensor {
            channels: self.channels,
            side: self.side,
            data,
        }
    }

    pub fn same_shape(&self, other: &TopologyTensor) -> bool {
        self.channels == other.channels && self.side == other.side
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing DSQT header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported DSQT version {version}")));
        }
        let channels = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let side = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let body = &bytes[14..];
        if body.len() != channels * side * side {
            return Err(Error::Format(format!(
                "DSQT body has {} bytes, header says {channels}x{side}x{side}",
                body.len()
            )));
        }
        TopologyTensor::from_data(channels, side, body.to_vec())
    }
}

pub fn fold(matrix: &Topology, channels: usize) -> Result<TopologyTensor> {
    let s = patch_side(channels).ok_or_else(|| {
        Error::validation(format!("channel count {channels} is not a perfect square"))
    })?;
    if !matrix.is_square() {
        return Err(Error::validation(format!(
            "topology {}x{} is not square",
            matrix.rows(),
            matrix.cols()
        )));
    }
    let n = matrix.rows();
    if n % s != 0 {
        return Err(Error::validation(format!(
            "side {n} is not divisible by patch size {s}"
        )));
    }
    let m = n / s;
    let mut data = vec![0u8; channels * m * m];
    for r in 0..n {
        for c in 0..n {
            let ch = (r % s) * s + (c % s);
            data[ch * m * m + (r / s) * m + c / s] = matrix.get(r, c);
        }
    }
    TopologyTensor::from_data(channels, m, data)
}

pub fn unfold(t: &TopologyTensor) -> Topology {
    let s = patch_side(t.channels).expect("validated on construction");
    let m = t.side;
    let n = s * m;
    let mut cells = vec![0u8; n * n];
    for (ch, plane) in t.data.chunks_exact(m * m).enumerate() {
        let (dr, dc) = (ch / s, ch % s);
        for i in 0..m {
            for j in 0..m {
                cells[(i * s + dr) * n + j * s + dc] = plane[i * m + j];
            }
        }
    }
    Topology::from_cells(n, n, cells).expect("tensor entries are binary")
}
