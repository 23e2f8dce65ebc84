//! Segmentation and uncertainty losses.
//!
//! The training objective is
//! `dce + lambda_rmsd * rmsd + lambda_corr * (1 - corr)`, where `dce` is soft
//! Dice plus cross-entropy on the class logits, `rmsd` is the masked RMS gap
//! between predicted uncertainty and the smoothed error target, and `corr` is
//! their masked Pearson correlation.
//!
//! The slice kernels in this module return analytic gradients next to the
//! values; every reduction runs in a fixed sequential order so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelSchema;
use crate::unctarget::UncertaintyTarget;
use crate::voxvol::{mask_of, LabelVolume, MaskVolume, VoxelGrid};

/// Smoothing added to both numerator and denominator of soft Dice.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Radius used by [`UncMaskMode::Dilated`].
pub const DILATED_MASK_RADIUS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct LossWeights {
    pub lambda_rmsd: f64,
    pub lambda_corr: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rmsd: 0.1,
            lambda_corr: 0.01,
            epsilon: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rmsd >= 0.0 && self.lambda_corr >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Same epsilon, both uncertainty weights zero.
    pub fn without_uncertainty(&self) -> Self {
        LossWeights {
            lambda_rmsd: 0.0,
            lambda_corr: 0.0,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dce: f64,
    pub rmsd: f64,
    pub corr: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(dce: f64, rmsd: f64, corr: f64, weights: &LossWeights) -> Self {
        LossBreakdown {
            dce,
            rmsd,
            corr,
            total: dce + weights.lambda_rmsd * rmsd + weights.lambda_corr * (1.0 - corr),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dce.is_finite()
            && self.rmsd.is_finite()
            && self.corr.is_finite()
            && self.total.is_finite()
    }
}

/// Region on which the uncertainty losses and metrics are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncMaskMode {
    /// True tumor voxels.
    #[default]
    Tumor,
    /// True tumor dilated by [`DILATED_MASK_RADIUS`].
    Dilated,
    /// Every voxel.
    Global,
}

pub fn uncertainty_mask(
    gt: &LabelVolume,
    schema: &LabelSchema,
    mode: UncMaskMode,
) -> Result<MaskVolume> {
    Ok(match mode {
        UncMaskMode::Global => MaskVolume::ones(gt.dims()),
        UncMaskMode::Tumor => mask_of(gt, schema.tumor_labels()?),
        UncMaskMode::Dilated => mask_of(gt, schema.tumor_labels()?).dilate(DILATED_MASK_RADIUS),
    })
}

/// Class index per voxel, resolved through the schema.
pub fn class_targets(gt: &LabelVolume, schema: &LabelSchema) -> Result<Vec<usize>> {
    gt.labels()
        .iter()
        .map(|&l| {
            schema.class_of(l).ok_or_else(|| {
                Error::Schema(format!("label {l} not in schema '{}'", schema.schema_id()))
            })
        })
        .collect()
}

/// Soft Dice (mean over foreground classes) plus mean voxel cross-entropy.
pub fn dice_ce_loss(seg_logits: &VoxelGrid, gt: &LabelVolume, schema: &LabelSchema) -> Result<f64> {
    seg_logits.dims().ensure_same(&gt.dims(), "dice/ce loss")?;
    if seg_logits.channels() != schema.class_count() {
        return Err(Error::Shape(format!(
            "logits have {} channels, schema has {} classes",
            seg_logits.channels(),
            schema.class_count()
        )));
    }
    let logits: Vec<f64> = seg_logits.data().iter().map(|&v| v as f64).collect();
    let targets = class_targets(gt, schema)?;
    Ok(kernels::dice_ce(&logits, schema.class_count(), &targets).value)
}

pub fn rmsd_loss(
    u: &VoxelGrid,
    target: &UncertaintyTarget,
    mask: &MaskVolume,
    eps: f64,
) -> Result<f64> {
    let (u, e, m) = unc_inputs(u, target, mask)?;
    Ok(kernels::rmsd(&u, &e, &m, eps).value)
}

pub fn corr_coeff(
    u: &VoxelGrid,
    target: &UncertaintyTarget,
    mask: &MaskVolume,
    eps: f64,
) -> Result<f64> {
    let (u, e, m) = unc_inputs(u, target, mask)?;
    Ok(kernels::corr(&u, &e, &m, eps).value)
}

pub fn combined_loss(
    seg_logits: &VoxelGrid,
    gt: &LabelVolume,
    schema: &LabelSchema,
    u: &VoxelGrid,
    target: &UncertaintyTarget,
    mask: &MaskVolume,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let dce = dice_ce_loss(seg_logits, gt, schema)?;
    let rmsd = rmsd_loss(u, target, mask, weights.epsilon)?;
    let corr = corr_coeff(u, target, mask, weights.epsilon)?;
    Ok(LossBreakdown::new(dce, rmsd, corr, weights))
}

fn unc_inputs(
    u: &VoxelGrid,
    target: &UncertaintyTarget,
    mask: &MaskVolume,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if u.channels() != 1 {
        return Err(Error::Shape(format!(
            "uncertainty must have one channel, got {}",
            u.channels()
        )));
    }
    u.dims()
        .ensure_same(&target.dims(), "uncertainty vs target")?;
    u.dims().ensure_same(&mask.dims(), "uncertainty vs mask")?;
    Ok((u.channel_f64(0), target.values().to_vec(), mask.as_f64()))
}

/// Slice-level loss kernels with analytic gradients.
pub mod kernels {
    use super::{LossBreakdown, LossWeights, DICE_SMOOTH};

    /// A scalar together with its gradient w.r.t. the primary input.
    #[derive(Clone, Debug)]
    pub struct Valued {
        pub value: f64,
        pub grad: Vec<f64>,
    }

    /// Channel-major softmax over `classes` channels of `n` voxels each.
    pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
        let n = logits.len() / classes;
        let mut probs = vec![0.0; logits.len()];
        for v in 0..n {
            let mut max = f64::NEG_INFINITY;
            for c in 0..classes {
                max = max.max(logits[c * n + v]);
            }
            let mut sum = 0.0;
            for c in 0..classes {
                let e = (logits[c * n + v] - max).exp();
                probs[c * n + v] = e;
                sum += e;
            }
            for c in 0..classes {
                probs[c * n + v] /= sum;
            }
        }
        probs
    }

    /// Index of the largest logit per voxel (first one wins ties).
    pub fn argmax(logits: &[f64], classes: usize) -> Vec<usize> {
        let n = logits.len() / classes;
        (0..n)
            .map(|v| {
                let mut best = 0;
                for c in 1..classes {
                    if logits[c * n + v] > logits[best * n + v] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Soft Dice over foreground classes `1..classes` plus mean cross-entropy.
    /// Gradient is w.r.t. the logits.
    pub fn dice_ce(logits: &[f64], classes: usize, targets: &[usize]) -> Valued {
        let n = targets.len();
        assert_eq!(
            logits.len(),
            classes * n,
            "logit buffer does not match targets"
        );
        let probs = softmax(logits, classes);

        // dL/dp, accumulated per class then pushed through the softmax.
        let mut dp = vec![0.0; logits.len()];

        let mut ce = 0.0;
        for (v, &t) in targets.iter().enumerate() {
            let p = probs[t * n + v].max(f64::MIN_POSITIVE);
            ce -= p.ln();
            dp[t * n + v] -= 1.0 / (p * n as f64);
        }
        ce /= n as f64;

        let fg = classes - 1;
        let mut dice_sum = 0.0;
        for c in 1..classes {
            let pc = &probs[c * n..(c + 1) * n];
            let mut inter = 0.0;
            let mut psum = 0.0;
            let mut gsum = 0.0;
            for (v, &t) in targets.iter().enumerate() {
                let g = (t == c) as u8 as f64;
                inter += pc[v] * g;
                psum += pc[v];
                gsum += g;
            }
            let num = 2.0 * inter + DICE_SMOOTH;
            let den = psum + gsum + DICE_SMOOTH;
            dice_sum += num / den;
            let scale = -1.0 / (fg as f64);
            for (v, &t) in targets.iter().enumerate() {
                let g = (t == c) as u8 as f64;
                let d_dice = (2.0 * g * den - num) / (den * den);
                dp[c * n + v] += scale * d_dice;
            }
        }
        let dice_loss = 1.0 - dice_sum / fg as f64;

        let mut grad = vec![0.0; logits.len()];
        for v in 0..n {
            let mut dot = 0.0;
            for c in 0..classes {
                dot += probs[c * n + v] * dp[c * n + v];
            }
            for c in 0..classes {
                grad[c * n + v] = probs[c * n + v] * (dp[c * n + v] - dot);
            }
        }
        Valued {
            value: dice_loss + ce,
            grad,
        }
    }

    /// `sqrt(sum M (U - E)^2 / (sum M + eps))`, gradient w.r.t. `U`.
    /// At zero loss the gradient is taken as zero.
    pub fn rmsd(u: &[f64], e: &[f64], m: &[f64], eps: f64) -> Valued {
        let mut sq = 0.0;
        let mut count = 0.0;
        for i in 0..u.len() {
            let d = u[i] - e[i];
            sq += m[i] * d * d;
            count += m[i];
        }
        let denom = count + eps;
        let value = (sq / denom).sqrt();
        let grad = if value > 0.0 {
            (0..u.len())
                .map(|i| m[i] * (u[i] - e[i]) / (denom * value))
                .collect()
        } else {
            vec![0.0; u.len()]
        };
        Valued { value, grad }
    }

    /// Masked Pearson correlation, gradient w.r.t. `U`.
    ///
    /// Means are taken over mask voxels; returns 0 (with zero gradient) when
    /// either masked variance vanishes or the mask is empty.
    pub fn corr(u: &[f64], e: &[f64], m: &[f64], eps: f64) -> Valued {
        let zero = || Valued {
            value: 0.0,
            grad: vec![0.0; u.len()],
        };
        let mut count = 0.0;
        let mut su = 0.0;
        let mut se = 0.0;
        for i in 0..u.len() {
            count += m[i];
            su += m[i] * u[i];
            se += m[i] * e[i];
        }
        if count == 0.0 {
            return zero();
        }
        let mu = su / count;
        let me = se / count;
        let mut num = 0.0;
        let mut suu = 0.0;
        let mut see = 0.0;
        for i in 0..u.len() {
            let du = u[i] - mu;
            let de = e[i] - me;
            num += m[i] * du * de;
            suu += m[i] * du * du;
            see += m[i] * de * de;
        }
        if suu == 0.0 || see == 0.0 {
            return zero();
        }
        let a = (suu * see).sqrt();
        let den = a + eps;
        let value = num / den;
        // dN/dU_i = M_i (E_i - Ebar); dA/dU_i = See * M_i (U_i - Ubar) / A.
        let grad = (0..u.len())
            .map(|i| {
                let dn = m[i] * (e[i] - me);
                let da = see * m[i] * (u[i] - mu) / a;
                dn / den - num * da / (den * den)
            })
            .collect();
        Valued { value, grad }
    }

    /// The uncertainty part of the objective and its gradient w.r.t. `U`:
    /// `lambda_rmsd * rmsd + lambda_corr * (1 - corr)`.
    pub struct UncertaintyTerms {
        pub rmsd: f64,
        pub corr: f64,
        pub value: f64,
        pub grad_u: Vec<f64>,
    }

    pub fn uncertainty_terms(u: &[f64], e: &[f64], m: &[f64], w: &LossWeights) -> UncertaintyTerms {
        let r = rmsd(u, e, m, w.epsilon);
        let c = corr(u, e, m, w.epsilon);
        let grad_u = r
            .grad
            .iter()
            .zip(&c.grad)
            .map(|(gr, gc)| w.lambda_rmsd * gr - w.lambda_corr * gc)
            .collect();
        UncertaintyTerms {
            rmsd: r.value,
            corr: c.value,
            value: w.lambda_rmsd * r.value + w.lambda_corr * (1.0 - c.value),
            grad_u,
        }
    }

    pub fn breakdown(dce: f64, terms: &UncertaintyTerms, w: &LossWeights) -> LossBreakdown {
        LossBreakdown::new(dce, terms.rmsd, terms.corr, w)
    }
}
