//! Dice + cross-entropy, masked RMSD and masked correlation for an
//! untrained network on one phantom.
//!
//! cargo run --release --example loss_terms

use uncseg::labelspace::ModelKind;
use uncseg::losses::{combined_loss, uncertainty_mask, LossWeights, UncMaskMode};
use uncseg::net::{forward, Feature, NetConfig, Parameters};
use uncseg::synthdata::{generate_phantom, PhantomConfig};
use uncseg::trainer::predict_labels;
use uncseg::unctarget::target_from_labels;

fn main() -> uncseg::Result<()> {
    let cfg = PhantomConfig::default_for(ModelKind::Cm);
    let (image, gt) = generate_phantom(&cfg)?;
    let schema = &cfg.schema;
    let params = Parameters::<f32>::init(NetConfig {
        in_channels: image.channels(),
        num_classes: schema.class_count(),
        depth: 3,
        base_width: 8,
        seed: 1,
    })?;
    let (out, _) = forward(&params, &Feature::from_grid(&image))?;
    let pred = predict_labels(&out, schema)?;
    let target = target_from_labels(&pred, &gt, schema.tumor_labels()?)?;
    let (seg, _, u) = out.to_grids();
    for mode in [
        UncMaskMode::Tumor,
        UncMaskMode::Dilated,
        UncMaskMode::Global,
    ] {
        let mask = uncertainty_mask(&gt, schema, mode)?;
        let l = combined_loss(
            &seg,
            &gt,
            schema,
            &u,
            &target,
            &mask,
            &LossWeights::default(),
        )?;
        println!(
            "{mode:?}: dce {:.4} rmsd {:.4} corr {:.4} total {:.4}",
            l.dce, l.rmsd, l.corr, l.total
        );
    }
    Ok(())
}
