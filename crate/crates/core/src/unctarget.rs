//! Binary tumor error maps and their 3x3x3 box-smoothed uncertainty targets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelId;
use crate::voxvol::{mask_of, Dims, LabelVolume, MaskVolume, VoxelGrid};

/// 1 where prediction and ground truth disagree on combined-tumor membership.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorMap {
    dims: Dims,
    values: Vec<u8>,
}

impl ErrorMap {
    pub fn new(dims: Dims, values: Vec<u8>) -> Result<Self> {
        let m = MaskVolume::new(dims, values)?;
        Ok(ErrorMap {
            dims,
            values: m.values().to_vec(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn to_mask(&self) -> MaskVolume {
        MaskVolume::new(self.dims, self.values.clone()).expect("error map is binary")
    }
}

impl From<MaskVolume> for ErrorMap {
    fn from(m: MaskVolume) -> Self {
        ErrorMap {
            dims: m.dims(),
            values: m.values().to_vec(),
        }
    }
}

/// Smoothed error map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyTarget {
    dims: Dims,
    values: Vec<f64>,
}

impl UncertaintyTarget {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_grid(&self) -> VoxelGrid {
        VoxelGrid::from_f64(self.dims, &self.values).expect("target values are finite")
    }

    pub fn crop(&self, origin: [usize; 3], size: Dims) -> Result<UncertaintyTarget> {
        size.validate()?;
        for axis in 0..3 {
            let end = origin[axis] + size.extent(axis);
            if end > self.dims.extent(axis) {
                return Err(Error::Bounds {
                    index: end,
                    extent: self.dims.extent(axis),
                });
            }
        }
        let mut values = Vec::with_capacity(size.voxels());
        for z in 0..size.nz {
            for y in 0..size.ny {
                let start = self.dims.index(origin[0], origin[1] + y, origin[2] + z);
                values.extend_from_slice(&self.values[start..start + size.nx]);
            }
        }
        Ok(UncertaintyTarget { dims: size, values })
    }

    /// Wraps precomputed smoothed values, checking the `[0, 1]` range.
    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.voxels() {
            return Err(Error::Length(format!(
                "target {dims} needs {} values, got {}",
                dims.voxels(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("target values must lie in [0, 1]".into()));
        }
        Ok(UncertaintyTarget { dims, values })
    }
}

/// When the error map is rebuilt during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRefresh {
    /// From the current forward pass, every optimizer step.
    #[default]
    Step,
    /// Once per case per epoch, from the first forward pass of that epoch.
    Epoch,
}

pub fn error_map(
    pred: &LabelVolume,
    gt: &LabelVolume,
    tumor_labels: &BTreeSet<LabelId>,
) -> Result<ErrorMap> {
    pred.ensure_compatible(gt, "error map")?;
    let p = mask_of(pred, tumor_labels);
    let g = mask_of(gt, tumor_labels);
    Ok(ErrorMap::from(p.xor(&g)?))
}

/// 3x3x3 mean with zero padding; the divisor is always 27.
pub fn box_smooth_3(x: &ErrorMap) -> UncertaintyTarget {
    let dims = x.dims;
    let values: Vec<f64> = x.values.iter().map(|&v| v as f64).collect();
    let summed = box_sum_3(&values, dims);
    UncertaintyTarget {
        dims,
        values: summed.into_iter().map(|s| s / 27.0).collect(),
    }
}

/// Separable 3-tap window sums along x, y then z, zero outside the grid.
fn box_sum_3(values: &[f64], dims: Dims) -> Vec<f64> {
    let mut a = values.to_vec();
    let mut b = vec![0.0; a.len()];
    let strides = [1, dims.nx, dims.nx * dims.ny];
    for (axis, &stride) in strides.iter().enumerate() {
        let extent = dims.extent(axis);
        for (idx, out) in b.iter_mut().enumerate() {
            let coord = (idx / stride) % extent;
            let mut s = a[idx];
            if coord > 0 {
                s += a[idx - stride];
            }
            if coord + 1 < extent {
                s += a[idx + stride];
            }
            *out = s;
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// `box_smooth_3(error_map(pred, gt, tumor_labels))`.
pub fn target_from_labels(
    pred: &LabelVolume,
    gt: &LabelVolume,
    tumor_labels: &BTreeSet<LabelId>,
) -> Result<UncertaintyTarget> {
    Ok(box_smooth_3(&error_map(pred, gt, tumor_labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{builtin_schema, ModelKind};

    fn single(dims: Dims, at: (usize, usize, usize)) -> ErrorMap {
        ErrorMap::from(MaskVolume::from_fn(dims, |x, y, z| (x, y, z) == at))
    }

    #[test]
    fn identical_labels_give_zero_error() {
        let schema = builtin_schema(ModelKind::Cm);
        let d = Dims::new(4, 1, 1).unwrap();
        let lv = LabelVolume::new(d, vec![0, 1, 2, 3], &schema).unwrap();
        let e = error_map(&lv, &lv, schema.tumor_labels().unwrap()).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn missed_tumor_marks_exactly_the_tumor() {
        let schema = builtin_schema(ModelKind::Cm);
        let d = Dims::new(5, 1, 1).unwrap();
        let gt = LabelVolume::new(d, vec![0, 2, 3, 1, 0], &schema).unwrap();
        let pred = LabelVolume::new(d, vec![0; 5], &schema).unwrap();
        let e = error_map(&pred, &gt, schema.tumor_labels().unwrap()).unwrap();
        assert_eq!(e.values(), &[0, 1, 1, 1, 0]);
    }

    #[test]
    fn subregion_confusion_is_not_an_error() {
        let schema = builtin_schema(ModelKind::Cm);
        let d = Dims::new(2, 1, 1).unwrap();
        let gt = LabelVolume::new(d, vec![3, 2], &schema).unwrap();
        let pred = LabelVolume::new(d, vec![1, 3], &schema).unwrap();
        let e = error_map(&pred, &gt, schema.tumor_labels().unwrap()).unwrap();
        assert_eq!(e.values(), &[0, 0]);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let schema = builtin_schema(ModelKind::Cm);
        let a = LabelVolume::new(Dims::new(2, 1, 1).unwrap(), vec![0, 0], &schema).unwrap();
        let b = LabelVolume::new(Dims::new(1, 2, 1).unwrap(), vec![0, 0], &schema).unwrap();
        assert!(matches!(
            error_map(&a, &b, schema.tumor_labels().unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_map_smooths_to_zero() {
        let d = Dims::cube(5).unwrap();
        let t = box_smooth_3(&ErrorMap::from(MaskVolume::zeros(d)));
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_impulse_spreads_one_27th() {
        let d = Dims::cube(5).unwrap();
        let t = box_smooth_3(&single(d, (2, 2, 2)));
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    let near = (1..=3).contains(&x) && (1..=3).contains(&y) && (1..=3).contains(&z);
                    let want = if near { 1.0 / 27.0 } else { 0.0 };
                    assert_eq!(t.values()[d.index(x, y, z)], want);
                }
            }
        }
    }

    #[test]
    fn corner_impulse_keeps_eight_27ths() {
        let d = Dims::cube(4).unwrap();
        let t = box_smooth_3(&single(d, (0, 0, 0)));
        let nonzero: Vec<f64> = t.values().iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(nonzero.len(), 8);
        assert!(nonzero.iter().all(|&v| v == 1.0 / 27.0));
        let mass: f64 = t.values().iter().sum();
        assert!((mass - 8.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn constant_one_interior_is_preserved() {
        let d = Dims::cube(3).unwrap();
        let t = box_smooth_3(&ErrorMap::from(MaskVolume::ones(d)));
        assert_eq!(t.values()[d.index(1, 1, 1)], 1.0);
        assert_eq!(t.values()[d.index(0, 0, 0)], 8.0 / 27.0);
    }
}
