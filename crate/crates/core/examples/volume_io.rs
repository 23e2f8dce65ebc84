//! Write a two-channel scalar volume and a label volume as VXV files, read
//! them back, and pull out a slice.
//!
//! cargo run --example volume_io

use uncseg::labelspace::{builtin_schema, ModelKind};
use uncseg::voxvol::{
    extract_slice, read_vxv, write_vxv, Axis, Dims, LabelVolume, Volume, VoxelGrid,
};

fn main() -> uncseg::Result<()> {
    let dir = std::env::temp_dir().join("uncseg_volume_io");
    std::fs::create_dir_all(&dir).map_err(|e| uncseg::Error::Input(e.to_string()))?;

    let dims = Dims::new(6, 5, 4)?;
    let data: Vec<f32> = (0..2 * dims.voxels()).map(|i| i as f32 / 10.0).collect();
    let image = VoxelGrid::new(dims, 2, data)?;
    let path = dir.join("image.vxv");
    write_vxv(&Volume::Scalar(image.clone()), &path)?;
    let back = read_vxv(&path)?.into_scalar()?;
    assert_eq!(back, image);
    println!(
        "{}: {} bytes, dims {}, {} channels",
        path.display(),
        24 + 4 * 2 * dims.voxels(),
        back.dims(),
        back.channels()
    );

    let schema = builtin_schema(ModelKind::Cm);
    let labels = LabelVolume::new(
        dims,
        (0..dims.voxels()).map(|i| (i % 4) as u16).collect(),
        &schema,
    )?;
    let lpath = dir.join("labels.vxv");
    write_vxv(&Volume::Labels(labels.clone()), &lpath)?;
    let lback = read_vxv(&lpath)?.into_labels()?.bind(&schema)?;
    assert_eq!(lback, labels);

    for axis in [Axis::Axial, Axis::Coronal, Axis::Sagittal] {
        let s = extract_slice(&lback, axis, 1)?;
        println!(
            "{} slice 1: {}x{}, first row {:?}",
            axis.name(),
            s.width,
            s.height,
            &s.data[..s.width]
        );
    }
    Ok(())
}
