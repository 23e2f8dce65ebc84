//! Error map and smoothed uncertainty target for an over-segmented phantom.
//!
//! cargo run --release --example uncertainty_target

use uncseg::labelspace::ModelKind;
use uncseg::synthdata::{generate_phantom, PhantomConfig};
use uncseg::taxonomy::{build_case, TaxonomyKind};
use uncseg::unctarget::{error_map, target_from_labels};

fn main() -> uncseg::Result<()> {
    let cfg = PhantomConfig::default_for(ModelKind::Cm);
    let (_, gt) = generate_phantom(&cfg)?;
    let case = build_case(TaxonomyKind::Dilated, &gt, &cfg.schema)?;
    let tumor = cfg.schema.tumor_labels()?;

    let e = error_map(&case.pred, &gt, tumor)?;
    let t = target_from_labels(&case.pred, &gt, tumor)?;
    let mass: f64 = t.values().iter().sum();
    let max = t.values().iter().cloned().fold(0.0, f64::max);
    println!("error voxels {}, target mass {mass:.1} (equals error count away from borders), max {max:.3}", e.count());

    let levels: Vec<usize> = (0..=27)
        .map(|k| {
            t.values()
                .iter()
                .filter(|&&v| (v * 27.0).round() as usize == k)
                .count()
        })
        .collect();
    println!("voxels per level k/27: {levels:?}");
    Ok(())
}
