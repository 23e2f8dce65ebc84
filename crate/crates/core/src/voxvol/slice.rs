use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dims, LabelVolume, MaskVolume, VoxelGrid};
use crate::error::{Error, Result};

/// Anatomical slicing direction, identified with the fixed index axis:
/// axial fixes z, coronal fixes y, sagittal fixes x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }

    /// Extent of the fixed axis.
    pub fn extent(&self, dims: Dims) -> usize {
        match self {
            Axis::Axial => dims.nz,
            Axis::Coronal => dims.ny,
            Axis::Sagittal => dims.nx,
        }
    }

    /// (width, height) of the plane.
    pub fn plane_shape(&self, dims: Dims) -> (usize, usize) {
        match self {
            Axis::Axial => (dims.nx, dims.ny),
            Axis::Coronal => (dims.nx, dims.nz),
            Axis::Sagittal => (dims.ny, dims.nz),
        }
    }

    /// Flat volume index of plane pixel `(u, v)` on slice `index`.
    pub fn voxel_index(&self, dims: Dims, index: usize, u: usize, v: usize) -> usize {
        match self {
            Axis::Axial => dims.index(u, v, index),
            Axis::Coronal => dims.index(u, index, v),
            Axis::Sagittal => dims.index(index, u, v),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Axis::Axial),
            "coronal" => Ok(Axis::Coronal),
            "sagittal" => Ok(Axis::Sagittal),
            other => Err(Error::Usage(format!("unknown axis '{other}'"))),
        }
    }
}

/// Owned 2D field; pixel `(u, v)` lives at `u + width * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[u + self.width * v]
    }
}

/// Volumes that can be cut into planes.
pub trait Sliceable {
    type Value: Copy;

    fn slice_dims(&self) -> Dims;
    fn value_at(&self, idx: usize) -> Self::Value;
}

impl Sliceable for LabelVolume {
    type Value = u16;

    fn slice_dims(&self) -> Dims {
        self.dims()
    }

    fn value_at(&self, idx: usize) -> u16 {
        self.labels()[idx]
    }
}

impl Sliceable for MaskVolume {
    type Value = u8;

    fn slice_dims(&self) -> Dims {
        self.dims()
    }

    fn value_at(&self, idx: usize) -> u8 {
        self.values()[idx]
    }
}

/// Slicing a multi-channel grid reads channel 0; use [`ChannelView`] for others.
impl Sliceable for VoxelGrid {
    type Value = f32;

    fn slice_dims(&self) -> Dims {
        self.dims()
    }

    fn value_at(&self, idx: usize) -> f32 {
        self.data()[idx]
    }
}

/// Borrowed single channel of a [`VoxelGrid`].
pub struct ChannelView<'a> {
    dims: Dims,
    data: &'a [f32],
}

impl VoxelGrid {
    pub fn channel_view(&self, c: usize) -> ChannelView<'_> {
        ChannelView {
            dims: self.dims(),
            data: self.channel(c),
        }
    }
}

impl Sliceable for ChannelView<'_> {
    type Value = f32;

    fn slice_dims(&self) -> Dims {
        self.dims
    }

    fn value_at(&self, idx: usize) -> f32 {
        self.data[idx]
    }
}

pub fn extract_slice<V: Sliceable + ?Sized>(
    volume: &V,
    axis: Axis,
    index: usize,
) -> Result<Plane<V::Value>> {
    let dims = volume.slice_dims();
    let extent = axis.extent(dims);
    if index >= extent {
        return Err(Error::Bounds { index, extent });
    }
    let (width, height) = axis.plane_shape(dims);
    let mut data = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            data.push(volume.value_at(axis.voxel_index(dims, index, u, v)));
        }
    }
    Ok(Plane {
        width,
        height,
        data,
    })
}
