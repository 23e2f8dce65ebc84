//! Segmentation overlap and uncertainty quality metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{GroupName, GroupReduction, LabelId, LabelSchema};
use crate::losses::{kernels, uncertainty_mask, LossWeights, UncMaskMode};
use crate::unctarget::target_from_labels;
use crate::voxvol::{labels_to_mask, LabelVolume, MaskVolume, VoxelGrid};

/// Number of final epochs averaged in a run summary.
pub const DEFAULT_SUMMARY_WINDOW: usize = 20;

/// `2|A∩B| / (|A|+|B|)`, and 1.0 when both masks are empty.
pub fn dsc(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    pred.dims().ensure_same(&gt.dims(), "dsc")?;
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        a += p as usize;
        b += g as usize;
        inter += (p & g) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

fn ensure_schema(pred: &LabelVolume, gt: &LabelVolume, schema: &LabelSchema) -> Result<()> {
    for (what, v) in [("prediction", pred), ("ground truth", gt)] {
        if !v.schema_id().is_empty() && v.schema_id() != schema.schema_id() {
            return Err(Error::Schema(format!(
                "{what} is bound to schema '{}', expected '{}'",
                v.schema_id(),
                schema.schema_id()
            )));
        }
    }
    pred.dims().ensure_same(&gt.dims(), "group dsc")
}

/// DSC of a single label.
pub fn label_dsc(
    pred: &LabelVolume,
    gt: &LabelVolume,
    schema: &LabelSchema,
    label: LabelId,
) -> Result<f64> {
    ensure_schema(pred, gt, schema)?;
    let set = [label].into_iter().collect();
    dsc(
        &labels_to_mask(pred, schema, &set)?,
        &labels_to_mask(gt, schema, &set)?,
    )
}

/// DSC for a named group: union masks for tumor composites, unweighted mean
/// of per-label DSC for anatomical groups.
pub fn group_dsc(
    pred: &LabelVolume,
    gt: &LabelVolume,
    schema: &LabelSchema,
    group: GroupName,
) -> Result<f64> {
    ensure_schema(pred, gt, schema)?;
    let members = schema.group(group)?;
    match group.reduction() {
        GroupReduction::Union => dsc(
            &labels_to_mask(pred, schema, members)?,
            &labels_to_mask(gt, schema, members)?,
        ),
        GroupReduction::LabelMean => {
            let mut sum = 0.0;
            for &l in members {
                sum += label_dsc(pred, gt, schema, l)?;
            }
            Ok(sum / members.len() as f64)
        }
    }
}

/// Uncertainty RMSD and correlation against the smoothed error-map target,
/// on the true-tumor mask with default epsilon.
pub fn unc_metrics(
    u: &VoxelGrid,
    pred: &LabelVolume,
    gt: &LabelVolume,
    schema: &LabelSchema,
) -> Result<(f64, f64)> {
    unc_metrics_with(
        u,
        pred,
        gt,
        schema,
        UncMaskMode::Tumor,
        LossWeights::default().epsilon,
    )
}

pub fn unc_metrics_with(
    u: &VoxelGrid,
    pred: &LabelVolume,
    gt: &LabelVolume,
    schema: &LabelSchema,
    mode: UncMaskMode,
    eps: f64,
) -> Result<(f64, f64)> {
    if u.channels() != 1 {
        return Err(Error::Shape(format!(
            "uncertainty must have one channel, got {}",
            u.channels()
        )));
    }
    u.dims().ensure_same(&gt.dims(), "uncertainty metrics")?;
    let target = target_from_labels(pred, gt, schema.tumor_labels()?)?;
    let mask = uncertainty_mask(gt, schema, mode)?.as_f64();
    let uv = u.channel_f64(0);
    Ok((
        kernels::rmsd(&uv, target.values(), &mask, eps).value,
        kernels::corr(&uv, target.values(), &mask, eps).value,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CaseMetrics {
    pub case_id: String,
    pub dsc: BTreeMap<GroupName, f64>,
    pub unc_rmsd: f64,
    pub unc_corr: f64,
}

impl CaseMetrics {
    /// All report groups of `schema` plus uncertainty metrics.
    pub fn evaluate(
        case_id: impl Into<String>,
        pred: &LabelVolume,
        gt: &LabelVolume,
        u: &VoxelGrid,
        schema: &LabelSchema,
        mode: UncMaskMode,
    ) -> Result<CaseMetrics> {
        let mut dsc = BTreeMap::new();
        for g in schema.report_groups() {
            dsc.insert(g, group_dsc(pred, gt, schema, g)?);
        }
        let (unc_rmsd, unc_corr) =
            unc_metrics_with(u, pred, gt, schema, mode, LossWeights::default().epsilon)?;
        Ok(CaseMetrics {
            case_id: case_id.into(),
            dsc,
            unc_rmsd,
            unc_corr,
        })
    }

    /// Flat `name → value` view: `dsc_<group>`, `unc_rmsd`, `unc_corr`.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .dsc
            .iter()
            .map(|(g, v)| (format!("dsc_{g}"), *v))
            .collect();
        out.push(("unc_rmsd".into(), self.unc_rmsd));
        out.push(("unc_corr".into(), self.unc_corr));
        out
    }
}

/// Per-column mean over cases, summed in case order.
pub fn mean_columns(cases: &[CaseMetrics]) -> Result<Vec<(String, f64)>> {
    let first = cases
        .first()
        .ok_or_else(|| Error::Usage("no cases to average".into()))?;
    let mut acc = first.columns();
    for c in &cases[1..] {
        let cols = c.columns();
        if cols.len() != acc.len() {
            return Err(Error::Shape("cases report different metric sets".into()));
        }
        for (a, (name, v)) in acc.iter_mut().zip(cols) {
            if a.0 != name {
                return Err(Error::Shape(format!("metric '{}' vs '{name}'", a.0)));
            }
            a.1 += v;
        }
    }
    let n = cases.len() as f64;
    Ok(acc.into_iter().map(|(k, v)| (k, v / n)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochRecord {
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunSummary {
    /// Requested window; the effective one is `min(window, epochs)`.
    pub window: usize,
    pub epochs_averaged: usize,
    pub final_window: BTreeMap<String, f64>,
    pub per_epoch: Vec<EpochRecord>,
}

impl RunSummary {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.final_window.get(name).copied()
    }
}

/// Means of every recorded metric over the final `min(window, n)` epochs.
pub fn summarize_run(history: &[EpochRecord], window: usize) -> Result<RunSummary> {
    if history.is_empty() {
        return Err(Error::Usage(
            "cannot summarize a run with no recorded epochs".into(),
        ));
    }
    if window == 0 {
        return Err(Error::Usage("summary window must be at least 1".into()));
    }
    let take = window.min(history.len());
    let tail = &history[history.len() - take..];
    let mut final_window = BTreeMap::new();
    for name in tail[0].values.keys() {
        let mut sum = 0.0;
        for rec in tail {
            sum += rec.values.get(name).copied().ok_or_else(|| {
                Error::Usage(format!("epoch {} is missing metric '{name}'", rec.epoch))
            })?;
        }
        final_window.insert(name.clone(), sum / take as f64);
    }
    Ok(RunSummary {
        window,
        epochs_averaged: take,
        final_window,
        per_epoch: history.to_vec(),
    })
}

/// CSV with a `case_id` column followed by the metric columns.
pub fn case_csv(cases: &[CaseMetrics]) -> String {
    let mut out = String::new();
    if let Some(first) = cases.first() {
        out.push_str("case_id");
        for (name, _) in first.columns() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
    }
    for c in cases {
        out.push_str(&c.case_id);
        for (_, v) in c.columns() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_case_csv(path: &Path, cases: &[CaseMetrics]) -> Result<()> {
    fs::write(path, case_csv(cases)).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{builtin_schema, um_schema, ModelKind};
    use crate::voxvol::Dims;

    fn mask(bits: &[u8]) -> MaskVolume {
        MaskVolume::new(Dims::new(bits.len(), 1, 1).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn dsc_counts() {
        // |A|=4, |B|=6, |A∩B|=3
        let a = mask(&[1, 1, 1, 1, 0, 0, 0, 0, 0]);
        let b = mask(&[0, 1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(dsc(&a, &b).unwrap(), 0.6);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert_eq!(dsc(&mask(&[1, 0]), &mask(&[0, 1])).unwrap(), 0.0);
        assert!(matches!(
            dsc(&mask(&[1]), &mask(&[1, 0])),
            Err(Error::Shape(_))
        ));
    }

    fn lv(labels: &[u16], schema: &LabelSchema) -> LabelVolume {
        LabelVolume::new(
            Dims::new(labels.len(), 1, 1).unwrap(),
            labels.to_vec(),
            schema,
        )
        .unwrap()
    }

    #[test]
    fn whole_tumor_ignores_subregion_confusion() {
        let s = builtin_schema(ModelKind::Cm);
        let gt = lv(&[0, 1, 2, 3, 3, 0], &s);
        let pred = lv(&[0, 3, 1, 2, 3, 0], &s);
        assert_eq!(
            group_dsc(&pred, &gt, &s, GroupName::WholeTumor).unwrap(),
            1.0
        );
        assert!(group_dsc(&pred, &gt, &s, GroupName::EnhancingTumor).unwrap() < 1.0);
        assert_eq!(group_dsc(&gt, &gt, &s, GroupName::TumorCore).unwrap(), 1.0);
    }

    #[test]
    fn whole_brain_is_mean_of_labels() {
        let s = um_schema(4).unwrap();
        // cortical {1,2}, subcortical {3,4}, tumor 5
        let gt = lv(&[1, 1, 2, 3, 4, 5, 0], &s);
        let pred = lv(&[1, 2, 2, 3, 3, 5, 0], &s);
        let per: Vec<f64> = (1..=4)
            .map(|l| label_dsc(&pred, &gt, &s, l).unwrap())
            .collect();
        let wb = group_dsc(&pred, &gt, &s, GroupName::WholeBrain).unwrap();
        assert!((wb - per.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        let cort = group_dsc(&pred, &gt, &s, GroupName::Cortical).unwrap();
        assert!((cort - (per[0] + per[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let cm = builtin_schema(ModelKind::Cm);
        let um = builtin_schema(ModelKind::Um);
        let a = lv(&[0, 1], &cm);
        assert!(matches!(
            group_dsc(&a, &a, &um, GroupName::TumorAll),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            group_dsc(&a, &a, &cm, GroupName::Cortical),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn summary_window() {
        let hist: Vec<EpochRecord> = (0..25)
            .map(|e| EpochRecord {
                epoch: e,
                values: BTreeMap::from([("m".to_string(), e as f64), ("c".to_string(), 0.9)]),
            })
            .collect();
        let s = summarize_run(&hist, 20).unwrap();
        assert_eq!(s.get("m"), Some(14.5));
        assert!((s.get("c").unwrap() - 0.9).abs() < 1e-12);
        let s = summarize_run(&hist[..10], 20).unwrap();
        assert_eq!(s.epochs_averaged, 10);
        assert_eq!(s.get("m"), Some(4.5));
        assert!(matches!(summarize_run(&[], 20), Err(Error::Usage(_))));
    }

    #[test]
    fn unc_metrics_on_exact_and_constant() {
        let s = builtin_schema(ModelKind::Cm);
        let d = Dims::cube(6).unwrap();
        let mut g = vec![0u16; 216];
        for x in 1..5 {
            for y in 1..5 {
                for z in 1..5 {
                    g[d.index(x, y, z)] = 2;
                }
            }
        }
        let mut p = g.clone();
        p[d.index(1, 1, 1)] = 0;
        let gt = LabelVolume::new(d, g, &s).unwrap();
        let pred = LabelVolume::new(d, p, &s).unwrap();
        let target = target_from_labels(&pred, &gt, s.tumor_labels().unwrap()).unwrap();
        let u = VoxelGrid::from_f64(d, target.values()).unwrap();
        let (r, c) = unc_metrics(&u, &pred, &gt, &s).unwrap();
        // U == E gives A / (A + eps) with A the masked sum of squared deviations.
        let tm: Vec<f64> = gt
            .labels()
            .iter()
            .zip(u.data())
            .filter(|(l, _)| **l != 0)
            .map(|(_, &v)| v as f64)
            .collect();
        let mean = tm.iter().sum::<f64>() / tm.len() as f64;
        let a: f64 = tm.iter().map(|v| (v - mean) * (v - mean)).sum();
        assert!(r < 1e-6, "{r}");
        assert!((c - a / (a + 1e-6)).abs() < 1e-12, "{c} {a}");
        let flat = VoxelGrid::filled(d, 1, 0.3).unwrap();
        assert_eq!(unc_metrics(&flat, &pred, &gt, &s).unwrap().1, 0.0);
    }

    #[test]
    fn csv_layout() {
        let s = builtin_schema(ModelKind::Cm);
        let a = lv(&[0, 1, 2], &s);
        let u = VoxelGrid::filled(a.dims(), 1, 0.0).unwrap();
        let m = CaseMetrics::evaluate("case_0001", &a, &a, &u, &s, UncMaskMode::Tumor).unwrap();
        let csv = case_csv(&[m]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "case_id,dsc_whole_tumor,dsc_tumor_core,dsc_enhancing_tumor,unc_rmsd,unc_corr"
        );
        assert!(lines.next().unwrap().starts_with("case_0001,1,1,1,"));
    }
}
