use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;

use crate::voxvol::{Dims, VoxelGrid};

/// Scalar type the network can run in: `f32` for training, `f64` for
/// gradient verification.
pub trait Real: Float + AddAssign + Send + Sync + Debug + Default + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = alpha·A·B + beta·C` for an `m×k` by `k×n` product, each matrix
    /// addressed by (row stride, column stride).
    ///
    /// # Safety
    /// Every addressed element must lie inside the pointed-to buffers and
    /// `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (*const Self, isize, isize),
        b: (*const Self, isize, isize),
        beta: Self,
        c: (*mut Self, isize, isize),
    );
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (*const Self, isize, isize),
        b: (*const Self, isize, isize),
        beta: Self,
        c: (*mut Self, isize, isize),
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a.0, a.1, a.2, b.0, b.1, b.2, beta, c.0, c.1, c.2,
        )
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (*const Self, isize, isize),
        b: (*const Self, isize, isize),
        beta: Self,
        c: (*mut Self, isize, isize),
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.0, a.1, a.2, b.0, b.1, b.2, beta, c.0, c.1, c.2,
        )
    }
}

/// Channel-major feature map (same layout as [`VoxelGrid`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Feature<T> {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<T>,
}

impl<T: Real> Feature<T> {
    pub fn zeros(channels: usize, dims: Dims) -> Self {
        Feature {
            channels,
            dims,
            data: vec![T::zero(); channels * dims.voxels()],
        }
    }

    pub fn from_grid(grid: &VoxelGrid) -> Self {
        Feature {
            channels: grid.channels(),
            dims: grid.dims(),
            data: grid.data().iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// Lossy for `f64` features; panics only if a value is non-finite.
    pub fn to_grid(&self) -> VoxelGrid {
        VoxelGrid::new(
            self.dims,
            self.channels,
            self.data.iter().map(|v| v.f64() as f32).collect(),
        )
        .expect("network outputs are finite")
    }
}
