//! Constructed prediction cases for checking where uncertainty lands:
//! a perfect prediction, an over-prediction and an under-prediction of the
//! same ground truth.
//!
//! Each case carries an uncertainty field built from the smoothed error map
//! and the voxel set that field should concentrate on.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labelspace::{LabelSchema, BACKGROUND};
use crate::render::{GT_FILE, PRED_FILE, UNC_FILE};
use crate::unctarget::{box_smooth_3, ErrorMap};
use crate::voxvol::{labels_to_mask, write_vxv, LabelVolume, MaskVolume, Volume, VoxelGrid};

/// Shell thickness used for the dilated and eroded cases.
pub const SHELL_RADIUS: usize = 3;
/// Half-width of the boundary band for the exact case.
pub const BAND_RADIUS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaxonomyKind {
    /// Prediction equals ground truth. The uncertainty field is the
    /// expected target when the boundary could be off by one voxel either
    /// way: the mean of the smoothed error maps of a one-voxel dilation and
    /// a one-voxel erosion.
    Exact,
    /// Prediction is the tumor dilated by [`SHELL_RADIUS`]; the extra shell
    /// gets the outermost tumor label.
    Dilated,
    /// Prediction is the tumor eroded by [`SHELL_RADIUS`].
    Eroded,
}

impl TaxonomyKind {
    pub const ALL: [TaxonomyKind; 3] = [
        TaxonomyKind::Exact,
        TaxonomyKind::Dilated,
        TaxonomyKind::Eroded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaxonomyKind::Exact => "exact",
            TaxonomyKind::Dilated => "dilated",
            TaxonomyKind::Eroded => "eroded",
        }
    }
}

pub struct TaxonomyCase {
    pub kind: TaxonomyKind,
    pub gt: LabelVolume,
    pub pred: LabelVolume,
    pub unc: VoxelGrid,
    /// Boundary band, false-positive shell or false-negative shell.
    pub region: MaskVolume,
}

fn smoothed(m: &MaskVolume) -> Result<Vec<f64>> {
    Ok(box_smooth_3(&ErrorMap::new(m.dims(), m.values().to_vec())?)
        .values()
        .to_vec())
}

fn relabel(
    gt: &LabelVolume,
    schema: &LabelSchema,
    grow: &MaskVolume,
    shrink: &MaskVolume,
) -> Result<LabelVolume> {
    let fill = match schema.has_tumor_subregions() {
        true => schema.tumor_subregions()?.edema,
        false => *schema
            .tumor_labels()?
            .iter()
            .next()
            .expect("schema has a tumor label"),
    };
    let labels = gt
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if grow.values()[i] == 1 {
                fill
            } else if shrink.values()[i] == 1 {
                BACKGROUND
            } else {
                l
            }
        })
        .collect();
    LabelVolume::new(gt.dims(), labels, schema)
}

/// Builds one case from a ground-truth volume with a nonempty tumor.
pub fn build_case(
    kind: TaxonomyKind,
    gt: &LabelVolume,
    schema: &LabelSchema,
) -> Result<TaxonomyCase> {
    let tumor = labels_to_mask(gt, schema, schema.tumor_labels()?)?;
    if tumor.count() == 0 {
        return Err(Error::Data("ground truth has no tumor voxels".into()));
    }
    let empty = MaskVolume::zeros(gt.dims());
    let (pred, unc, region) = match kind {
        TaxonomyKind::Exact => {
            let outer = tumor.dilate(1).and_not(&tumor)?;
            let inner = tumor.and_not(&tumor.erode(1))?;
            let u: Vec<f64> = smoothed(&outer)?
                .iter()
                .zip(smoothed(&inner)?)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let band = tumor
                .dilate(BAND_RADIUS)
                .and_not(&tumor.erode(BAND_RADIUS))?;
            (gt.clone(), u, band)
        }
        TaxonomyKind::Dilated => {
            let shell = tumor.dilate(SHELL_RADIUS).and_not(&tumor)?;
            (
                relabel(gt, schema, &shell, &empty)?,
                smoothed(&shell)?,
                shell,
            )
        }
        TaxonomyKind::Eroded => {
            let shell = tumor.and_not(&tumor.erode(SHELL_RADIUS))?;
            (
                relabel(gt, schema, &empty, &shell)?,
                smoothed(&shell)?,
                shell,
            )
        }
    };
    Ok(TaxonomyCase {
        kind,
        gt: gt.clone(),
        pred,
        unc: VoxelGrid::from_f64(gt.dims(), &unc)?,
        region,
    })
}

impl TaxonomyCase {
    /// Writes `gt.vxv`, `pred.vxv`, `unc.vxv` and `schema.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, schema: &LabelSchema) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vxv(&Volume::Labels(self.gt.clone()), dir.join(GT_FILE))?;
        write_vxv(&Volume::Labels(self.pred.clone()), dir.join(PRED_FILE))?;
        write_vxv(&Volume::Scalar(self.unc.clone()), dir.join(UNC_FILE))?;
        schema.save(dir.join(crate::cli::SCHEMA_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{builtin_schema, ModelKind};
    use crate::unctarget::error_map;
    use crate::voxvol::Dims;

    fn cube_gt() -> (LabelVolume, LabelSchema) {
        let s = builtin_schema(ModelKind::Cm);
        let d = Dims::cube(16).unwrap();
        let labels = (0..d.voxels())
            .map(|i| {
                let (x, y, z) = d.coords(i);
                let r2 = [x, y, z]
                    .iter()
                    .map(|&c| (c as f64 - 7.5).powi(2))
                    .sum::<f64>();
                if r2 < 9.0 {
                    1
                } else if r2 < 25.0 {
                    2
                } else {
                    0
                }
            })
            .collect();
        (LabelVolume::new(d, labels, &s).unwrap(), s)
    }

    #[test]
    fn dilated_and_eroded_targets_are_smoothed_error_maps() {
        let (gt, s) = cube_gt();
        for kind in [TaxonomyKind::Dilated, TaxonomyKind::Eroded] {
            let c = build_case(kind, &gt, &s).unwrap();
            let e = error_map(&c.pred, &gt, s.tumor_labels().unwrap()).unwrap();
            assert_eq!(e.to_mask(), c.region);
            let want = box_smooth_3(&e);
            for (a, b) in c.unc.data().iter().zip(want.values()) {
                assert_eq!(*a, *b as f32);
            }
        }
    }

    #[test]
    fn exact_case_keeps_prediction() {
        let (gt, s) = cube_gt();
        let c = build_case(TaxonomyKind::Exact, &gt, &s).unwrap();
        assert_eq!(c.pred, gt);
        assert!(c.unc.data().iter().any(|&u| u > 0.0));
        assert!(c.region.count() > 0);
    }
}
