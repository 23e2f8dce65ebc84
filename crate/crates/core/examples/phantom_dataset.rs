//! Generate a small phantom dataset, print per-case tumor statistics and
//! save it in the on-disk layout `uncseg train` reads.
//!
//! cargo run --release --example phantom_dataset [out_dir]

use uncseg::labelspace::ModelKind;
use uncseg::synthdata::{generate_dataset, Dataset, PhantomConfig};
use uncseg::voxvol::labels_to_mask;

fn main() -> uncseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("uncseg_phantoms"));
    let cfg = PhantomConfig {
        seed: 7,
        ..PhantomConfig::default_for(ModelKind::Cm)
    };
    let ds = generate_dataset(&cfg, 10, 0.2)?;
    let tumor = cfg.schema.tumor_labels()?;
    for case in ds.train.iter().chain(&ds.val) {
        let voxels = labels_to_mask(&case.labels, &cfg.schema, tumor)?.count();
        println!(
            "case {:2} seed {:2}: {voxels} tumor voxels",
            case.id, case.seed
        );
    }
    ds.save(&out)?;
    let again = Dataset::load(&out)?;
    println!(
        "saved {} train / {} val cases to {}",
        again.train.len(),
        again.val.len(),
        out.display()
    );
    println!("{}", serde_json::to_string_pretty(&ds.manifest())?);
    Ok(())
}
