//! Dense volume types shared by the rest of the crate.
//!
//! Every volume stores its voxels x-fastest: the flat index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Multi-channel grids are channel-major, so channel
//! `c` occupies the contiguous block `c * voxels .. (c + 1) * voxels`.

mod io;
mod mask;
mod slice;

pub use io::{read_vxv, write_vxv, Volume, VXV_HEADER_LEN, VXV_MAGIC};
pub use mask::labels_to_mask;
pub(crate) use mask::mask_of;
pub use slice::{extract_slice, Axis, Plane, Sliceable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{LabelId, LabelSchema};

/// Spatial extent of a volume in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let dims = Dims { nx, ny, nz };
        dims.validate()?;
        Ok(dims)
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Shape(format!(
                "dims must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        self.nx
            .checked_mul(self.ny)
            .and_then(|v| v.checked_mul(self.nz))
            .and_then(|v| u64::try_from(v).ok())
            .ok_or_else(|| Error::Shape("voxel count overflows a 64-bit count".into()))?;
        Ok(())
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }

    pub fn extent(&self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            _ => self.nz,
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub(crate) fn ensure_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Shape(format!(
                "{what}: dims {}x{}x{} vs {}x{}x{}",
                self.nx, self.ny, self.nz, other.nx, other.ny, other.nz
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Dense multi-channel scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    channels: usize,
    data: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(dims: Dims, channels: usize, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if channels == 0 {
            return Err(Error::Shape("voxel grid needs at least one channel".into()));
        }
        let expected = channels * dims.voxels();
        if data.len() != expected {
            return Err(Error::Length(format!(
                "grid {dims}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at element {pos}")));
        }
        Ok(VoxelGrid {
            dims,
            channels,
            data,
        })
    }

    pub fn zeros(dims: Dims, channels: usize) -> Result<Self> {
        Self::filled(dims, channels, 0.0)
    }

    pub fn filled(dims: Dims, channels: usize, value: f32) -> Result<Self> {
        dims.validate()?;
        Self::new(dims, channels, vec![value; channels * dims.voxels()])
    }

    /// Single-channel grid from `f64` samples.
    pub fn from_f64(dims: Dims, values: &[f64]) -> Result<Self> {
        Self::new(dims, 1, values.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[c * self.dims.voxels() + self.dims.index(x, y, z)]
    }

    /// Overwrites one voxel; rejects non-finite values to keep the invariant.
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, value: f32) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Data("non-finite value".into()));
        }
        let idx = c * self.dims.voxels() + self.dims.index(x, y, z);
        self.data[idx] = value;
        Ok(())
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|&v| v as f64).collect()
    }

    /// Copies the sub-box starting at `origin` with extent `size`.
    pub fn crop(&self, origin: [usize; 3], size: Dims) -> Result<VoxelGrid> {
        check_crop(self.dims, origin, size)?;
        let mut out = Vec::with_capacity(self.channels * size.voxels());
        for c in 0..self.channels {
            let src = self.channel(c);
            for z in 0..size.nz {
                for y in 0..size.ny {
                    let start = self.dims.index(origin[0], origin[1] + y, origin[2] + z);
                    out.extend_from_slice(&src[start..start + size.nx]);
                }
            }
        }
        VoxelGrid::new(size, self.channels, out)
    }
}

/// Dense integer label field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<LabelId>,
    schema_id: String,
}

impl LabelVolume {
    /// Builds a label volume and checks every label against `schema`.
    pub fn new(dims: Dims, labels: Vec<LabelId>, schema: &LabelSchema) -> Result<Self> {
        let lv = Self::unbound(dims, labels)?;
        lv.bind(schema)
    }

    /// A label volume not yet checked against any schema (e.g. freshly read
    /// from disk). Its `schema_id` is empty until [`LabelVolume::bind`].
    pub fn unbound(dims: Dims, labels: Vec<LabelId>) -> Result<Self> {
        dims.validate()?;
        if labels.len() != dims.voxels() {
            return Err(Error::Length(format!(
                "label volume {dims} needs {} labels, got {}",
                dims.voxels(),
                labels.len()
            )));
        }
        Ok(LabelVolume {
            dims,
            labels,
            schema_id: String::new(),
        })
    }

    pub fn bind(mut self, schema: &LabelSchema) -> Result<Self> {
        if let Some(&bad) = self.labels.iter().find(|&&l| !schema.contains(l)) {
            return Err(Error::Schema(format!(
                "label {bad} is not declared by schema '{}'",
                schema.schema_id()
            )));
        }
        self.schema_id = schema.schema_id().to_string();
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> LabelId {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn crop(&self, origin: [usize; 3], size: Dims) -> Result<LabelVolume> {
        check_crop(self.dims, origin, size)?;
        let mut out = Vec::with_capacity(size.voxels());
        for z in 0..size.nz {
            for y in 0..size.ny {
                let start = self.dims.index(origin[0], origin[1] + y, origin[2] + z);
                out.extend_from_slice(&self.labels[start..start + size.nx]);
            }
        }
        Ok(LabelVolume {
            dims: size,
            labels: out,
            schema_id: self.schema_id.clone(),
        })
    }

    pub(crate) fn ensure_compatible(&self, other: &LabelVolume, what: &str) -> Result<()> {
        self.dims.ensure_same(&other.dims, what)?;
        if !self.schema_id.is_empty()
            && !other.schema_id.is_empty()
            && self.schema_id != other.schema_id
        {
            return Err(Error::Schema(format!(
                "{what}: schema '{}' vs '{}'",
                self.schema_id, other.schema_id
            )));
        }
        Ok(())
    }
}

/// Binary voxel mask with values exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    dims: Dims,
    mask: Vec<u8>,
}

impl MaskVolume {
    pub fn new(dims: Dims, mask: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if mask.len() != dims.voxels() {
            return Err(Error::Length(format!(
                "mask {dims} needs {} values, got {}",
                dims.voxels(),
                mask.len()
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(MaskVolume { dims, mask })
    }

    pub fn zeros(dims: Dims) -> Self {
        MaskVolume {
            dims,
            mask: vec![0; dims.voxels()],
        }
    }

    pub fn ones(dims: Dims) -> Self {
        MaskVolume {
            dims,
            mask: vec![1; dims.voxels()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(dims.voxels());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    mask.push(u8::from(f(x, y, z)));
                }
            }
        }
        MaskVolume { dims, mask }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.mask[self.dims.index(x, y, z)] == 1
    }

    pub fn count(&self) -> usize {
        self.mask.iter().map(|&m| m as usize).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| m as f64).collect()
    }
}

fn check_crop(dims: Dims, origin: [usize; 3], size: Dims) -> Result<()> {
    size.validate()?;
    for (axis, (&o, &s)) in origin.iter().zip(size.as_array().iter()).enumerate() {
        if o + s > dims.extent(axis) {
            return Err(Error::Bounds {
                index: o + s,
                extent: dims.extent(axis),
            });
        }
    }
    Ok(())
}
