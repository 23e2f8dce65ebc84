use std::collections::BTreeSet;

use super::{LabelVolume, MaskVolume};
use crate::error::{Error, Result};
use crate::labelspace::{LabelId, LabelSchema};

/// Binary mask of the voxels whose label belongs to `label_set`.
pub fn labels_to_mask(
    lv: &LabelVolume,
    schema: &LabelSchema,
    label_set: &BTreeSet<LabelId>,
) -> Result<MaskVolume> {
    if let Some(&bad) = label_set.iter().find(|&&l| !schema.contains(l)) {
        return Err(Error::Schema(format!(
            "label {bad} is not declared by schema '{}'",
            schema.schema_id()
        )));
    }
    Ok(mask_of(lv, label_set))
}

/// Same as [`labels_to_mask`] without the schema check.
pub(crate) fn mask_of(lv: &LabelVolume, label_set: &BTreeSet<LabelId>) -> MaskVolume {
    // Label ids are u16, so a dense lookup table is cheap.
    let mut lut = vec![0u8; usize::from(u16::MAX) + 1];
    for &l in label_set {
        lut[usize::from(l)] = 1;
    }
    let mask = lv.labels().iter().map(|&l| lut[usize::from(l)]).collect();
    MaskVolume {
        dims: lv.dims(),
        mask,
    }
}

impl MaskVolume {
    fn zip_with(&self, other: &MaskVolume, f: impl Fn(u8, u8) -> u8) -> Result<MaskVolume> {
        self.dims.ensure_same(&other.dims, "mask combination")?;
        Ok(MaskVolume {
            dims: self.dims,
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn or(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.zip_with(other, |a, b| a & b)
    }

    /// Voxels in `self` but not in `other`.
    pub fn and_not(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    pub fn xor(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.zip_with(other, |a, b| a ^ b)
    }

    pub fn not(&self) -> MaskVolume {
        MaskVolume {
            dims: self.dims,
            mask: self.mask.iter().map(|&m| 1 - m).collect(),
        }
    }

    /// Morphological dilation with a Euclidean ball of `radius` voxels.
    pub fn dilate(&self, radius: usize) -> MaskVolume {
        self.morph(radius, true)
    }

    /// Morphological erosion with a Euclidean ball; outside the grid counts as
    /// foreground, so erosion does not eat in from the volume border.
    pub fn erode(&self, radius: usize) -> MaskVolume {
        self.morph(radius, false)
    }

    fn morph(&self, radius: usize, dilate: bool) -> MaskVolume {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let offsets: Vec<(isize, isize, isize)> = (-r..=r)
            .flat_map(|dz| (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (dx, dy, dz))))
            .filter(|(dx, dy, dz)| dx * dx + dy * dy + dz * dz <= r * r)
            .collect();
        let d = self.dims;
        let (nx, ny, nz) = (d.nx as isize, d.ny as isize, d.nz as isize);
        let mut out = vec![0u8; d.voxels()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let hit = offsets.iter().any(|&(dx, dy, dz)| {
                        let (px, py, pz) = (x + dx, y + dy, z + dz);
                        let inside = px >= 0 && py >= 0 && pz >= 0 && px < nx && py < ny && pz < nz;
                        if dilate {
                            inside && self.mask[d.index(px as usize, py as usize, pz as usize)] == 1
                        } else {
                            inside && self.mask[d.index(px as usize, py as usize, pz as usize)] == 0
                        }
                    });
                    let idx = d.index(x as usize, y as usize, z as usize);
                    out[idx] = if dilate {
                        u8::from(hit)
                    } else {
                        u8::from(!hit) & self.mask[idx]
                    };
                }
            }
        }
        MaskVolume { dims: d, mask: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{builtin_schema, ModelKind};
    use crate::voxvol::Dims;

    fn cm_volume(labels: Vec<u16>) -> LabelVolume {
        let schema = builtin_schema(ModelKind::Cm);
        LabelVolume::new(Dims::new(labels.len(), 1, 1).unwrap(), labels, &schema).unwrap()
    }

    #[test]
    fn empty_set_gives_empty_mask() {
        let schema = builtin_schema(ModelKind::Cm);
        let lv = cm_volume(vec![0, 1, 2, 3]);
        let m = labels_to_mask(&lv, &schema, &BTreeSet::new()).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn all_foreground_labels_without_background_give_full_mask() {
        let schema = builtin_schema(ModelKind::Cm);
        let lv = cm_volume(vec![1, 2, 3, 3, 2]);
        let m = labels_to_mask(&lv, &schema, &schema.foreground_labels()).unwrap();
        assert_eq!(m.count(), 5);
    }

    #[test]
    fn tumor_subregions_collapse_to_one_mask() {
        let schema = builtin_schema(ModelKind::Cm);
        let lv = cm_volume(vec![2, 0, 1, 3]);
        let set: BTreeSet<u16> = [1, 2, 3].into();
        let m = labels_to_mask(&lv, &schema, &set).unwrap();
        assert_eq!(m.values(), &[1, 0, 1, 1]);
    }

    #[test]
    fn unknown_label_in_set_is_a_schema_error() {
        let schema = builtin_schema(ModelKind::Cm);
        let lv = cm_volume(vec![0]);
        let set: BTreeSet<u16> = [9].into();
        assert!(matches!(
            labels_to_mask(&lv, &schema, &set),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn dilate_then_erode_single_voxel() {
        let d = Dims::cube(7).unwrap();
        let m = MaskVolume::from_fn(d, |x, y, z| (x, y, z) == (3, 3, 3));
        let big = m.dilate(1);
        assert_eq!(big.count(), 7);
        assert_eq!(big.erode(1), m);
        assert_eq!(m.erode(1).count(), 0);
    }
}
