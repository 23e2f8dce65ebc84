//! Render gt / prediction / error / overlay panels for the over-predicted
//! case and report how much of the drawn red sits on the false-positive
//! shell.
//!
//! cargo run --release --example overlay_render [out_dir]

use uncseg::labelspace::ModelKind;
use uncseg::render::{recover_u, render_case, render_slice, OverlaySpec, Palette, RenderOptions};
use uncseg::synthdata::{generate_phantom, PhantomConfig};
use uncseg::taxonomy::{build_case, TaxonomyKind};
use uncseg::voxvol::{extract_slice, Axis};

fn main() -> uncseg::Result<()> {
    let out: std::path::PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("uncseg_overlay"));
    let cfg = PhantomConfig::default_for(ModelKind::Cm);
    let (_, gt) = generate_phantom(&cfg)?;
    let case = build_case(TaxonomyKind::Dilated, &gt, &cfg.schema)?;
    let case_dir = out.join("case");
    case.write_dir(&case_dir, &cfg.schema)?;
    let files = render_case(
        &case_dir,
        &out.join("panels"),
        &[Axis::Axial, Axis::Coronal, Axis::Sagittal],
        &cfg.schema,
        &RenderOptions::default(),
    )?;
    for f in &files {
        println!("{}", f.display());
    }

    let palette = Palette::anatomy(&cfg.schema)?;
    let axis = Axis::Axial;
    let index = axis.extent(gt.dims()) / 2;
    let spec = OverlaySpec {
        axis,
        index,
        overlay_mask: None,
    };
    let img = render_slice(&case.pred, &case.unc, &spec, &palette)?;
    let labels = extract_slice(&case.pred, axis, index)?;
    let shell = extract_slice(&case.region, axis, index)?;
    let (mut inside, mut total) = (0.0, 0.0);
    for v in 0..img.height {
        for u in 0..img.width {
            let base = palette.color(labels.get(u, v));
            let w = recover_u(base, img.pixel(u, v)).unwrap_or(0.0);
            total += w;
            if shell.get(u, v) == 1 {
                inside += w;
            }
        }
    }
    println!(
        "central axial slice: {:.1}% of red mass on the false-positive shell",
        100.0 * inside / total
    );
    Ok(())
}
