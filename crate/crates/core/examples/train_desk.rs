//! A short desk-scale training run with per-epoch progress.
//!
//! cargo run --release --example train_desk [CM1|CM2|UM1|UM2] [epochs] [out_dir]

use uncseg::synthdata::{generate_dataset, PhantomConfig};
use uncseg::trainer::{fit, FitOptions, RunKind, TrainConfig};

fn main() -> uncseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: RunKind = args.next().as_deref().unwrap_or("CM1").parse()?;
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let out = args.next().map(Into::into);

    let phantom = PhantomConfig {
        seed: 7,
        ..PhantomConfig::default_for(kind.model())
    };
    let ds = generate_dataset(&phantom, 40, 0.2)?;
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::desk(kind)
    };
    let opts = FitOptions {
        out_dir: out,
        progress: Some(|r| {
            let cols: Vec<String> = r
                .values
                .iter()
                .map(|(k, v)| format!("{k}={v:.3}"))
                .collect();
            println!("epoch {:2} {}", r.epoch, cols.join(" "));
        }),
        ..Default::default()
    };
    let (state, summary) = fit(&cfg, &ds, &opts)?;
    println!(
        "{} epochs, final seg digest {}",
        state.epoch,
        state.params.seg_digest()
    );
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
