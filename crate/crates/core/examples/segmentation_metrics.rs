//! Region-group Dice and uncertainty metrics for the three constructed
//! prediction cases on a UM phantom.
//!
//! cargo run --release --example segmentation_metrics

use uncseg::labelspace::ModelKind;
use uncseg::losses::UncMaskMode;
use uncseg::metrics::CaseMetrics;
use uncseg::synthdata::{generate_phantom, PhantomConfig};
use uncseg::taxonomy::{build_case, TaxonomyKind};

fn main() -> uncseg::Result<()> {
    let cfg = PhantomConfig::default_for(ModelKind::Um);
    let (_, gt) = generate_phantom(&cfg)?;
    for kind in TaxonomyKind::ALL {
        let c = build_case(kind, &gt, &cfg.schema)?;
        let m = CaseMetrics::evaluate(
            kind.name(),
            &c.pred,
            &c.gt,
            &c.unc,
            &cfg.schema,
            UncMaskMode::Dilated,
        )?;
        let cols: Vec<String> = m
            .columns()
            .iter()
            .map(|(k, v)| format!("{k}={v:.3}"))
            .collect();
        println!("{:<8} {}", kind.name(), cols.join(" "));
    }
    Ok(())
}
