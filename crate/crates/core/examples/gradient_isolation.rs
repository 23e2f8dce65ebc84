//! Backpropagate a segmentation gradient with and without an uncertainty
//! gradient and show that only the uncertainty head's gradients differ.
//!
//! cargo run --release --example gradient_isolation

use uncseg::net::{
    backward, forward, Feature, Gradients, HeadGrads, NetConfig, Parameters, Partition,
};
use uncseg::voxvol::Dims;

fn main() -> uncseg::Result<()> {
    let cfg = NetConfig {
        in_channels: 1,
        num_classes: 4,
        depth: 2,
        base_width: 4,
        seed: 3,
    };
    let params = Parameters::<f64>::init(cfg)?;
    let dims = Dims::cube(8)?;
    let x = Feature {
        channels: 1,
        dims,
        data: (0..dims.voxels())
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect(),
    };
    let (_, state) = forward(&params, &x)?;
    let seg: Vec<f64> = (0..4 * dims.voxels())
        .map(|i| ((i % 13) as f64 - 6.0) * 1e-3)
        .collect();
    let unc: Vec<f64> = (0..dims.voxels())
        .map(|i| ((i % 5) as f64 - 2.0) * 1e-2)
        .collect();

    let mut only_seg = Gradients::zeros(&params);
    backward(
        &params,
        &state,
        &HeadGrads {
            seg_logits: Some(&seg),
            unc_logit: None,
        },
        &mut only_seg,
    )?;
    let mut both = Gradients::zeros(&params);
    backward(
        &params,
        &state,
        &HeadGrads {
            seg_logits: Some(&seg),
            unc_logit: Some(&unc),
        },
        &mut both,
    )?;

    for (i, t) in params.tensors().iter().enumerate() {
        let diff = only_seg
            .tensor(i)
            .iter()
            .zip(both.tensor(i))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let tag = match t.partition {
            Partition::Trunk => "trunk",
            Partition::SegHead => "seg",
            Partition::UncHead => "unc",
        };
        println!("{:<16} {tag:<5} max |difference| {diff:.3e}", t.name);
    }
    Ok(())
}
