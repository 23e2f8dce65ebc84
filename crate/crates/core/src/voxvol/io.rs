//! The VXV1 container.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `VXV1`                           |
//! | 4      | 1    | kind: 0 = scalar f32, 1 = label u16    |
//! | 5      | 4    | channels (u32)                         |
//! | 9      | 4    | nx (u32)                               |
//! | 13     | 4    | ny (u32)                               |
//! | 17     | 4    | nz (u32)                               |
//! | 21     | 3    | reserved, zero                         |
//! | 24     | ...  | payload, channel-major then x-fastest  |

use std::fs;
use std::path::Path;

use super::{Dims, LabelVolume, VoxelGrid};
use crate::error::{Error, Result};

pub const VXV_MAGIC: &[u8; 4] = b"VXV1";
pub const VXV_HEADER_LEN: usize = 24;

const KIND_SCALAR: u8 = 0;
const KIND_LABEL: u8 = 1;

/// Anything that can live in a VXV1 file.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(VoxelGrid),
    Labels(LabelVolume),
}

impl Volume {
    pub fn dims(&self) -> Dims {
        match self {
            Volume::Scalar(g) => g.dims(),
            Volume::Labels(l) => l.dims(),
        }
    }

    pub fn into_scalar(self) -> Result<VoxelGrid> {
        match self {
            Volume::Scalar(g) => Ok(g),
            Volume::Labels(_) => Err(Error::Format(
                "expected a scalar volume, found labels".into(),
            )),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            Volume::Labels(l) => Ok(l),
            Volume::Scalar(_) => Err(Error::Format(
                "expected a label volume, found scalars".into(),
            )),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (kind, channels, dims) = match self {
            Volume::Scalar(g) => (KIND_SCALAR, g.channels(), g.dims()),
            Volume::Labels(l) => (KIND_LABEL, 1, l.dims()),
        };
        let payload = match self {
            Volume::Scalar(g) => g.data().len() * 4,
            Volume::Labels(l) => l.labels().len() * 2,
        };
        let mut out = Vec::with_capacity(VXV_HEADER_LEN + payload);
        out.extend_from_slice(VXV_MAGIC);
        out.push(kind);
        for v in [channels, dims.nx, dims.ny, dims.nz] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&[0u8; 3]);
        match self {
            Volume::Scalar(g) => {
                for v in g.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Volume::Labels(l) => {
                for v in l.labels() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Volume> {
        if bytes.len() < 4 || &bytes[..4] != VXV_MAGIC {
            return Err(Error::Format("missing VXV1 magic".into()));
        }
        if bytes.len() < VXV_HEADER_LEN {
            return Err(Error::Length(format!(
                "header truncated: {} of {VXV_HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        let kind = bytes[4];
        let read_u32 = |off: usize| {
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
                as usize
        };
        let channels = read_u32(5);
        let dims = Dims {
            nx: read_u32(9),
            ny: read_u32(13),
            nz: read_u32(17),
        };
        if bytes[21..24] != [0, 0, 0] {
            return Err(Error::Format("reserved header bytes are not zero".into()));
        }
        dims.validate().map_err(|e| Error::Format(e.to_string()))?;
        if channels == 0 {
            return Err(Error::Format("zero channels".into()));
        }
        let (elem, kind_name) = match kind {
            KIND_SCALAR => (4, "scalar"),
            KIND_LABEL => (2, "label"),
            other => return Err(Error::Format(format!("unknown volume kind {other}"))),
        };
        if kind == KIND_LABEL && channels != 1 {
            return Err(Error::Format(format!(
                "label volumes have one channel, header says {channels}"
            )));
        }
        let count = channels
            .checked_mul(dims.voxels())
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        let payload = &bytes[VXV_HEADER_LEN..];
        if payload.len() != count * elem {
            return Err(Error::Length(format!(
                "{kind_name} payload for {channels}x{dims} needs {} bytes, found {}",
                count * elem,
                payload.len()
            )));
        }
        match kind {
            KIND_SCALAR => {
                let data: Vec<f32> = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("non-finite float at element {pos}")));
                }
                Ok(Volume::Scalar(VoxelGrid::new(dims, channels, data)?))
            }
            _ => {
                let labels = payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect();
                Ok(Volume::Labels(LabelVolume::unbound(dims, labels)?))
            }
        }
    }
}

impl From<VoxelGrid> for Volume {
    fn from(g: VoxelGrid) -> Self {
        Volume::Scalar(g)
    }
}

impl From<LabelVolume> for Volume {
    fn from(l: LabelVolume) -> Self {
        Volume::Labels(l)
    }
}

/// Reads a VXV1 file. Label volumes come back unbound to any schema.
pub fn read_vxv(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Volume::decode(&bytes)
}

pub fn write_vxv(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, volume.encode()).map_err(|e| Error::io(path, e))
}
