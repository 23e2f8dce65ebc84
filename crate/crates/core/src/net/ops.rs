//! 3D convolution, nearest upsampling and channel concat, forward and
//! backward. Convolutions are cubic (side 1 or 3), zero padded to keep
//! "same" output size at stride 1 and to halve each axis at stride 2.
//!
//! Convolutions lower to a patch matrix and one dense matrix product, so
//! each result is a fixed-order sum for a given shape.

use super::tensor::{Feature, Real};
use crate::voxvol::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    /// Cube side: 1 or 3.
    pub kernel: usize,
    /// 1 or 2.
    pub stride: usize,
}

impl ConvGeom {
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.taps()
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        Dims {
            nx: d.nx / self.stride,
            ny: d.ny / self.stride,
            nz: d.nz / self.stride,
        }
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
}

/// Output range `lo..hi` along one axis for which `o * stride + off` is a
/// valid input coordinate.
#[inline]
fn valid_range(out_n: usize, in_n: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
    // largest o with o*s + off <= in_n - 1
    let max = (in_n as isize - 1 - off).div_euclid(s);
    let hi = (max + 1).clamp(0, out_n as isize);
    (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
}

/// Precomputed per-tap offsets and valid ranges.
struct Tap {
    k: usize,
    dx: isize,
    dy: isize,
    dz: isize,
    xr: (usize, usize),
    yr: (usize, usize),
    zr: (usize, usize),
}

fn taps(g: &ConvGeom, ind: Dims, outd: Dims) -> Vec<Tap> {
    let p = g.pad();
    let mut out = Vec::with_capacity(g.taps());
    let ks = g.kernel;
    for kz in 0..ks {
        for ky in 0..ks {
            for kx in 0..ks {
                let (dx, dy, dz) = (kx as isize - p, ky as isize - p, kz as isize - p);
                out.push(Tap {
                    k: (kz * ks + ky) * ks + kx,
                    dx,
                    dy,
                    dz,
                    xr: valid_range(outd.nx, ind.nx, g.stride, dx),
                    yr: valid_range(outd.ny, ind.ny, g.stride, dy),
                    zr: valid_range(outd.nz, ind.nz, g.stride, dz),
                });
            }
        }
    }
    out
}

#[inline]
fn in_index(ind: Dims, s: usize, x: usize, y: usize, z: usize, t: &Tap) -> usize {
    let ix = (x * s) as isize + t.dx;
    let iy = (y * s) as isize + t.dy;
    let iz = (z * s) as isize + t.dz;
    ind.index(ix as usize, iy as usize, iz as usize)
}

/// Patch matrix: row `ci * taps + k` holds input channel `ci` shifted by tap
/// `k` at every output voxel, zero where the tap falls outside the input.
fn im2col<T: Real>(g: &ConvGeom, input: &Feature<T>, outd: Dims, taps: &[Tap]) -> Vec<T> {
    let ind = input.dims;
    let (n_in, n_out) = (ind.voxels(), outd.voxels());
    let mut col = vec![T::zero(); g.cin * g.taps() * n_out];
    for ci in 0..g.cin {
        let src = &input.data[ci * n_in..(ci + 1) * n_in];
        for t in taps {
            let row = &mut col[(ci * g.taps() + t.k) * n_out..][..n_out];
            let (xlo, xhi) = t.xr;
            if xlo >= xhi {
                continue;
            }
            let len = xhi - xlo;
            for z in t.zr.0..t.zr.1 {
                for y in t.yr.0..t.yr.1 {
                    let o = outd.index(xlo, y, z);
                    let i = in_index(ind, g.stride, xlo, y, z, t);
                    if g.stride == 1 {
                        row[o..o + len].copy_from_slice(&src[i..i + len]);
                    } else {
                        for (j, d) in row[o..o + len].iter_mut().enumerate() {
                            *d = src[i + j * g.stride];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
fn col2im<T: Real>(g: &ConvGeom, col: &[T], ind: Dims, outd: Dims, taps: &[Tap]) -> Vec<T> {
    let (n_in, n_out) = (ind.voxels(), outd.voxels());
    let mut gin = vec![T::zero(); g.cin * n_in];
    for ci in 0..g.cin {
        let dst = &mut gin[ci * n_in..(ci + 1) * n_in];
        for t in taps {
            let row = &col[(ci * g.taps() + t.k) * n_out..][..n_out];
            let (xlo, xhi) = t.xr;
            if xlo >= xhi {
                continue;
            }
            let len = xhi - xlo;
            for z in t.zr.0..t.zr.1 {
                for y in t.yr.0..t.yr.1 {
                    let o = outd.index(xlo, y, z);
                    let i = in_index(ind, g.stride, xlo, y, z, t);
                    if g.stride == 1 {
                        for (d, &v) in dst[i..i + len].iter_mut().zip(&row[o..o + len]) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in row[o..o + len].iter().enumerate() {
                            dst[i + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
    gin
}

/// A 1x1x1 stride-1 convolution reads its input directly as the patch matrix.
fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1
}

pub fn conv_forward<T: Real>(
    g: &ConvGeom,
    input: &Feature<T>,
    weight: &[T],
    bias: &[T],
) -> Feature<T> {
    assert_eq!(input.channels, g.cin);
    assert_eq!(weight.len(), g.weight_len());
    assert_eq!(bias.len(), g.cout);
    let outd = g.out_dims(input.dims);
    let n_out = outd.voxels();
    let k = g.cin * g.taps();
    let owned;
    let col: &[T] = if is_pointwise(g) {
        &input.data
    } else {
        owned = im2col(g, input, outd, &taps(g, input.dims, outd));
        &owned
    };
    let mut out = Feature::zeros(g.cout, outd);
    for (co, dst) in out.data.chunks_mut(n_out).enumerate() {
        dst.fill(bias[co]);
    }
    // out[cout, N] += W[cout, K] · col[K, N]
    unsafe {
        T::gemm(
            g.cout,
            k,
            n_out,
            T::one(),
            (weight.as_ptr(), k as isize, 1),
            (col.as_ptr(), n_out as isize, 1),
            T::one(),
            (out.data.as_mut_ptr(), n_out as isize, 1),
        );
    }
    out
}

pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Vec<T>>,
}

pub fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &Feature<T>,
    weight: &[T],
    grad_out: &[T],
    need_input_grad: bool,
) -> ConvGrads<T> {
    let ind = input.dims;
    let outd = g.out_dims(ind);
    let n_out = outd.voxels();
    assert_eq!(grad_out.len(), g.cout * n_out);
    assert_eq!(weight.len(), g.weight_len());
    let k = g.cin * g.taps();
    let taps = taps(g, ind, outd);

    let bias: Vec<T> = (0..g.cout)
        .map(|co| {
            let mut s = T::zero();
            for &v in &grad_out[co * n_out..(co + 1) * n_out] {
                s += v;
            }
            s
        })
        .collect();

    let owned;
    let col: &[T] = if is_pointwise(g) {
        &input.data
    } else {
        owned = im2col(g, input, outd, &taps);
        &owned
    };
    // dW[cout, K] = gout[cout, N] · col[K, N]^T
    let mut wgrad = vec![T::zero(); g.weight_len()];
    unsafe {
        T::gemm(
            g.cout,
            n_out,
            k,
            T::one(),
            (grad_out.as_ptr(), n_out as isize, 1),
            (col.as_ptr(), 1, n_out as isize),
            T::zero(),
            (wgrad.as_mut_ptr(), k as isize, 1),
        );
    }

    let input_grad = need_input_grad.then(|| {
        // dcol[K, N] = W[cout, K]^T · gout[cout, N]
        let mut dcol = vec![T::zero(); k * n_out];
        unsafe {
            T::gemm(
                k,
                g.cout,
                n_out,
                T::one(),
                (weight.as_ptr(), 1, k as isize),
                (grad_out.as_ptr(), n_out as isize, 1),
                T::zero(),
                (dcol.as_mut_ptr(), n_out as isize, 1),
            );
        }
        if is_pointwise(g) {
            dcol
        } else {
            col2im(g, &dcol, ind, outd, &taps)
        }
    });

    ConvGrads {
        weight: wgrad,
        bias,
        input: input_grad,
    }
}

pub fn relu_inplace<T: Real>(f: &mut Feature<T>) {
    for v in &mut f.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward<T: Real>(output: &Feature<T>, grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn upsample2<T: Real>(input: &Feature<T>) -> Feature<T> {
    let ind = input.dims;
    let outd = Dims {
        nx: ind.nx * 2,
        ny: ind.ny * 2,
        nz: ind.nz * 2,
    };
    let mut out = Feature::zeros(input.channels, outd);
    let (ni, no) = (ind.voxels(), outd.voxels());
    for c in 0..input.channels {
        let src = &input.data[c * ni..(c + 1) * ni];
        let dst = &mut out.data[c * no..(c + 1) * no];
        for z in 0..outd.nz {
            for y in 0..outd.ny {
                let srow = ind.index(0, y / 2, z / 2);
                let drow = outd.index(0, y, z);
                for x in 0..outd.nx {
                    dst[drow + x] = src[srow + x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad_out: &[T], channels: usize, in_dims: Dims) -> Vec<T> {
    let outd = Dims {
        nx: in_dims.nx * 2,
        ny: in_dims.ny * 2,
        nz: in_dims.nz * 2,
    };
    let (ni, no) = (in_dims.voxels(), outd.voxels());
    let mut gin = vec![T::zero(); channels * ni];
    for c in 0..channels {
        let go = &grad_out[c * no..(c + 1) * no];
        let gi = &mut gin[c * ni..(c + 1) * ni];
        for z in 0..outd.nz {
            for y in 0..outd.ny {
                let srow = in_dims.index(0, y / 2, z / 2);
                let drow = outd.index(0, y, z);
                for x in 0..outd.nx {
                    gi[srow + x / 2] += go[drow + x];
                }
            }
        }
    }
    gin
}

pub fn concat<T: Real>(a: &Feature<T>, b: &Feature<T>) -> Feature<T> {
    debug_assert_eq!(a.dims, b.dims);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Feature {
        channels: a.channels + b.channels,
        dims: a.dims,
        data,
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
