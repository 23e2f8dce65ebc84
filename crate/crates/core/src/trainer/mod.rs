//! Training loop: patch sampling, per-step uncertainty targets, the
//! combined loss, Adam updates, validation, checkpoints and run logs.

pub mod adam;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON as ADAM_EPSILON};

use crate::error::{Error, Result};
use crate::labelspace::{LabelSchema, ModelKind};
use crate::losses::{
    class_targets, kernels, uncertainty_mask, LossBreakdown, LossWeights, UncMaskMode,
};
use crate::metrics::{
    mean_columns, summarize_run, write_summary, CaseMetrics, EpochRecord, RunSummary,
    DEFAULT_SUMMARY_WINDOW,
};
use crate::net::{self, Feature, Gradients, HeadGrads, NetConfig, NetOutput, Parameters};
use crate::synthdata::{Case, Dataset};
use crate::unctarget::{target_from_labels, TargetRefresh, UncertaintyTarget};
use crate::voxvol::{Dims, LabelVolume, MaskVolume, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunKind {
    CM1,
    CM2,
    UM1,
    UM2,
}

impl RunKind {
    pub fn model(self) -> ModelKind {
        match self {
            RunKind::CM1 | RunKind::CM2 => ModelKind::Cm,
            RunKind::UM1 | RunKind::UM2 => ModelKind::Um,
        }
    }

    /// Whether the uncertainty losses contribute to training.
    pub fn trains_uncertainty(self) -> bool {
        matches!(self, RunKind::CM1 | RunKind::UM1)
    }
}

impl std::str::FromStr for RunKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CM1" => Ok(RunKind::CM1),
            "CM2" => Ok(RunKind::CM2),
            "UM1" => Ok(RunKind::UM1),
            "UM2" => Ok(RunKind::UM2),
            _ => Err(Error::Usage(format!("unknown run kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub run_kind: RunKind,
    pub epochs: usize,
    pub train_batches_per_epoch: usize,
    pub val_batches_per_epoch: usize,
    pub batch_size: usize,
    pub patch_dims: Dims,
    pub lr_start: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub target_refresh: TargetRefresh,
    pub unc_loss_mask: UncMaskMode,
    pub depth: usize,
    pub base_width: usize,
    pub summary_window: usize,
    /// Probability that a training patch is centered on a tumor voxel.
    pub tumor_bias: f64,
    /// Optional `[k, fold]` re-partition of the dataset.
    pub fold: Option<[usize; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk(RunKind::CM1)
    }
}

impl TrainConfig {
    /// Desk-scale defaults for a run kind.
    pub fn desk(run_kind: RunKind) -> Self {
        TrainConfig {
            run_kind,
            epochs: 30,
            train_batches_per_epoch: 16,
            val_batches_per_epoch: 4,
            batch_size: 2,
            patch_dims: Dims {
                nx: 32,
                ny: 32,
                nz: 32,
            },
            lr_start: 0.001,
            weights: LossWeights::default(),
            seed: 0,
            target_refresh: TargetRefresh::Step,
            unc_loss_mask: UncMaskMode::Tumor,
            depth: 3,
            base_width: 8,
            summary_window: DEFAULT_SUMMARY_WINDOW,
            tumor_bias: 0.5,
            fold: None,
        }
    }

    /// Full-scale protocol values: 500 epochs of 125/25 batches of four 128³ patches.
    pub fn full_scale(run_kind: RunKind) -> Self {
        TrainConfig {
            epochs: 500,
            train_batches_per_epoch: 125,
            val_batches_per_epoch: 25,
            batch_size: 4,
            patch_dims: Dims {
                nx: 128,
                ny: 128,
                nz: 128,
            },
            ..TrainConfig::desk(run_kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.train_batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, training batches and batch size must be positive".into(),
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr_start
            )));
        }
        if !(0.0..=1.0).contains(&self.tumor_bias) {
            return Err(Error::Config(format!(
                "tumor bias {} must lie in [0, 1]",
                self.tumor_bias
            )));
        }
        if self.summary_window == 0 {
            return Err(Error::Config("summary window must be at least 1".into()));
        }
        self.weights.validate()?;
        self.patch_dims.validate()?;
        let f = 1usize << self.depth.saturating_sub(1);
        if self.depth == 0 || self.patch_dims.as_array().iter().any(|n| n % f != 0) {
            return Err(Error::Config(format!(
                "patch {} must be divisible by {f} for depth {}",
                self.patch_dims, self.depth
            )));
        }
        Ok(())
    }

    /// Loss weights in effect: uncertainty terms are zeroed for CM2/UM2.
    pub fn effective_weights(&self) -> LossWeights {
        if self.run_kind.trains_uncertainty() {
            self.weights
        } else {
            self.weights.without_uncertainty()
        }
    }

    pub fn net_config(&self, in_channels: usize, num_classes: usize) -> NetConfig {
        NetConfig {
            in_channels,
            num_classes,
            depth: self.depth,
            base_width: self.base_width,
            seed: self.seed,
        }
    }
}

/// Linearly decayed learning rate `lr_start · (1 − t/epochs)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs || cfg.epochs == 0 {
        return Err(Error::Usage(format!(
            "epoch {epoch} outside 0..={}",
            cfg.epochs
        )));
    }
    Ok(cfg.lr_start * (1.0 - epoch as f64 / cfg.epochs as f64))
}

/// One training patch with its source case.
#[derive(Clone, Debug)]
pub struct Sample {
    pub case_id: usize,
    pub origin: [usize; 3],
    pub image: VoxelGrid,
    pub labels: LabelVolume,
    /// Precomputed uncertainty target; `None` recomputes it from the
    /// current forward pass.
    pub target: Option<UncertaintyTarget>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Parameters<f32>,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Digest of the trunk and segmentation head after each epoch.
    pub seg_digests: Vec<String>,
}

impl TrainState {
    pub fn new(net: NetConfig) -> Result<Self> {
        let params = Parameters::<f32>::init(net)?;
        let optimizer = Adam::new(&params);
        Ok(TrainState {
            params,
            optimizer,
            epoch: 0,
            history: Vec::new(),
            seg_digests: Vec::new(),
        })
    }
}

/// Per-sample forward results used by both the loss and diagnostics.
struct Evaluated {
    out: NetOutput<f32>,
    state: net::ForwardState<f32>,
    pred: LabelVolume,
}

fn run_forward(
    params: &Parameters<f32>,
    image: &VoxelGrid,
    schema: &LabelSchema,
) -> Result<Evaluated> {
    let x = Feature::<f32>::from_grid(image);
    let (out, state) = net::forward(params, &x)?;
    let pred = predict_labels(&out, schema)?;
    Ok(Evaluated { out, state, pred })
}

/// Argmax segmentation as schema labels.
pub fn predict_labels(out: &NetOutput<f32>, schema: &LabelSchema) -> Result<LabelVolume> {
    let logits = out.seg_logits.to_f64();
    let classes = out.seg_logits.channels;
    let labels = kernels::argmax(&logits, classes)
        .into_iter()
        .map(|c| schema.label_of(c))
        .collect();
    LabelVolume::new(out.seg_logits.dims, labels, schema)
}

/// One optimizer step on `batch` at learning rate `lr`. Returns the
/// batch-mean loss breakdown. Deterministic in (state, batch, cfg, lr).
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    schema: &LabelSchema,
    batch: &Batch,
    lr: f64,
) -> Result<LossBreakdown> {
    if batch.samples.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let w = cfg.effective_weights();
    let train_unc = w.lambda_rmsd != 0.0 || w.lambda_corr != 0.0;
    let classes = schema.class_count();
    let inv_b = 1.0 / batch.samples.len() as f64;
    let mut grads = Gradients::zeros(&state.params);
    let (mut dce, mut rmsd, mut corr) = (0.0, 0.0, 0.0);

    for s in &batch.samples {
        let ev = run_forward(&state.params, &s.image, schema)?;
        let logits = ev.out.seg_logits.to_f64();
        let targets = class_targets(&s.labels, schema)?;
        let seg = kernels::dice_ce(&logits, classes, &targets);
        let owned;
        let target = match &s.target {
            Some(t) => t,
            None => {
                owned = target_from_labels(&ev.pred, &s.labels, schema.tumor_labels()?)?;
                &owned
            }
        };
        let mask = uncertainty_mask(&s.labels, schema, cfg.unc_loss_mask)?.as_f64();
        let u = ev.out.unc_prob.to_f64();
        let terms = kernels::uncertainty_terms(&u, target.values(), &mask, &w);
        dce += seg.value;
        rmsd += terms.rmsd;
        corr += terms.corr;

        let d_seg: Vec<f32> = seg.grad.iter().map(|g| (g * inv_b) as f32).collect();
        let d_unc: Option<Vec<f32>> = train_unc.then(|| {
            terms
                .grad_u
                .iter()
                .zip(&u)
                .map(|(g, p)| (g * p * (1.0 - p) * inv_b) as f32)
                .collect()
        });
        let head = HeadGrads {
            seg_logits: Some(&d_seg),
            unc_logit: d_unc.as_deref(),
        };
        net::backward(&state.params, &ev.state, &head, &mut grads)?;
    }

    let report = LossBreakdown::new(dce * inv_b, rmsd * inv_b, corr * inv_b, &w);
    if !report.is_finite() || !grads.all_finite() {
        return Err(Error::Divergence {
            epoch: state.epoch,
            step: state.optimizer.step as usize,
            detail: format!(
                "non-finite loss or gradient: dce {} rmsd {} corr {} total {}; cases {:?}",
                report.dce,
                report.rmsd,
                report.corr,
                report.total,
                batch
                    .samples
                    .iter()
                    .map(|s| (s.case_id, s.origin))
                    .collect::<Vec<_>>()
            ),
        });
    }
    state.optimizer.update(&mut state.params, &grads, lr)?;
    Ok(report)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one training step, derived from (seed, epoch, step) so a
/// resumed run draws the same patches.
pub fn step_rng(seed: u64, epoch: usize, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed) ^ splitmix(((epoch as u64) << 32) | step as u64))
}

/// Origin of a `patch` crop centered near `center`, clamped to the volume.
fn crop_origin(center: [usize; 3], dims: Dims, patch: Dims) -> [usize; 3] {
    let d = dims.as_array();
    let p = patch.as_array();
    [0, 1, 2].map(|a| center[a].saturating_sub(p[a] / 2).min(d[a] - p[a]))
}

fn tumor_voxels(case: &Case, schema: &LabelSchema) -> Result<Vec<usize>> {
    let tumor = schema.tumor_labels()?;
    Ok(case
        .labels
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| tumor.contains(l))
        .map(|(i, _)| i)
        .collect())
}

/// Training data prepared once per run.
pub struct TrainingSet<'a> {
    cases: &'a [Case],
    tumor: Vec<Vec<usize>>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(cases: &'a [Case], schema: &LabelSchema) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let tumor = cases
            .iter()
            .map(|c| tumor_voxels(c, schema))
            .collect::<Result<_>>()?;
        Ok(TrainingSet { cases, tumor })
    }

    /// Random crops for one step; tumor-centered with probability `tumor_bias`.
    pub fn sample_batch(
        &self,
        cfg: &TrainConfig,
        epoch: usize,
        step: usize,
        targets: Option<&[UncertaintyTarget]>,
    ) -> Result<Batch> {
        let mut rng = step_rng(cfg.seed, epoch, step);
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let ci = rng.gen_range(0..self.cases.len());
            let case = &self.cases[ci];
            let dims = case.image.dims();
            let biased = rng.gen::<f64>() < cfg.tumor_bias;
            let center = if biased && !self.tumor[ci].is_empty() {
                let t = &self.tumor[ci];
                let (x, y, z) = dims.coords(t[rng.gen_range(0..t.len())]);
                [x, y, z]
            } else {
                [
                    rng.gen_range(0..dims.nx),
                    rng.gen_range(0..dims.ny),
                    rng.gen_range(0..dims.nz),
                ]
            };
            let origin = crop_origin(center, dims, cfg.patch_dims);
            samples.push(Sample {
                case_id: case.id,
                origin,
                image: case.image.crop(origin, cfg.patch_dims)?,
                labels: case.labels.crop(origin, cfg.patch_dims)?,
                target: targets
                    .map(|t| t[ci].crop(origin, cfg.patch_dims))
                    .transpose()?,
            });
        }
        Ok(Batch { samples })
    }
}

/// Whole-case outputs of the current network.
pub struct CasePrediction {
    pub pred: LabelVolume,
    pub unc_prob: VoxelGrid,
}

/// Center-crops `case` to `patch` (or keeps it whole if it already fits)
/// and runs the network.
pub fn predict_case(
    params: &Parameters<f32>,
    case: &Case,
    patch: Dims,
    schema: &LabelSchema,
) -> Result<(Case, CasePrediction)> {
    let dims = case.image.dims();
    let view = if dims == patch {
        case.clone()
    } else {
        let d = dims.as_array();
        let p = patch.as_array();
        if (0..3).any(|a| p[a] > d[a]) {
            return Err(Error::Shape(format!(
                "case {} is smaller than patch {patch}",
                case.id
            )));
        }
        let origin = [0, 1, 2].map(|a| (d[a] - p[a]) / 2);
        Case {
            id: case.id,
            seed: case.seed,
            image: case.image.crop(origin, patch)?,
            labels: case.labels.crop(origin, patch)?,
        }
    };
    let ev = run_forward(params, &view.image, schema)?;
    let unc_prob = ev.out.unc_prob.to_grid();
    Ok((
        view,
        CasePrediction {
            pred: ev.pred,
            unc_prob,
        },
    ))
}

/// Validation cases for `epoch`: a rotating window of
/// `val_batches_per_epoch · batch_size` cases (all cases if that is more).
pub fn validation_cases<'a>(cfg: &TrainConfig, val: &'a [Case], epoch: usize) -> Vec<&'a Case> {
    let want = (cfg.val_batches_per_epoch * cfg.batch_size).min(val.len());
    if want == 0 {
        return Vec::new();
    }
    let start = (epoch * want) % val.len();
    (0..want).map(|i| &val[(start + i) % val.len()]).collect()
}

fn check_disjoint(train: &[Case], val: &[Case]) -> Result<()> {
    let ids: BTreeSet<usize> = train.iter().map(|c| c.id).collect();
    if let Some(c) = val.iter().find(|c| ids.contains(&c.id)) {
        return Err(Error::Data(format!(
            "validation case {} is also a training case",
            c.id
        )));
    }
    Ok(())
}

/// Column order of `metrics.csv`.
pub fn metric_columns(schema: &LabelSchema) -> Vec<String> {
    let mut cols: Vec<String> = ["lr", "dce", "rmsd", "corr", "total"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(schema.report_groups().iter().map(|g| format!("dsc_{g}")));
    cols.push("unc_rmsd".into());
    cols.push("unc_corr".into());
    cols
}

pub fn metrics_csv(schema: &LabelSchema, history: &[EpochRecord]) -> String {
    let cols = metric_columns(schema);
    let mut out = String::from("epoch");
    for c in &cols {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for rec in history {
        let _ = write!(out, "{}", rec.epoch);
        for c in &cols {
            match rec.values.get(c) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub const STATE_FILE: &str = "state.json";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const PARAMS_DIR: &str = "params";

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct StateDoc {
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    seg_digests: Vec<String>,
}

pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}"))
}

/// Writes parameters, optimizer moments and run state to `dir`.
pub fn save_checkpoint(dir: &Path, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    state.params.save_dir(&dir.join(PARAMS_DIR))?;
    state.optimizer.save(&dir.join(OPTIMIZER_FILE))?;
    let doc = StateDoc {
        config: cfg.clone(),
        epoch: state.epoch,
        history: state.history.clone(),
        seg_digests: state.seg_digests.clone(),
    };
    let path = dir.join(STATE_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads a checkpoint written by [`save_checkpoint`] with its config.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, TrainState)> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: StateDoc = serde_json::from_str(&text)?;
    let params = Parameters::<f32>::load_dir(&dir.join(PARAMS_DIR))?;
    let optimizer = Adam::load(&dir.join(OPTIMIZER_FILE))?;
    if !optimizer.matches(&params) {
        return Err(Error::Format(format!(
            "{}: optimizer state does not match parameters",
            dir.display()
        )));
    }
    Ok((
        doc.config,
        TrainState {
            params,
            optimizer,
            epoch: doc.epoch,
            history: doc.history,
            seg_digests: doc.seg_digests,
        },
    ))
}

/// Full-volume uncertainty targets for every training case from the
/// current network (used when targets refresh once per epoch).
fn epoch_targets(
    state: &TrainState,
    cases: &[Case],
    schema: &LabelSchema,
) -> Result<Vec<UncertaintyTarget>> {
    cases
        .iter()
        .map(|c| {
            let ev = run_forward(&state.params, &c.image, schema)?;
            target_from_labels(&ev.pred, &c.labels, schema.tumor_labels()?)
        })
        .collect()
}

/// Validation metrics of the current network, averaged over cases.
pub fn validate_epoch(
    state: &TrainState,
    cfg: &TrainConfig,
    dataset: &Dataset,
    epoch: usize,
) -> Result<Vec<(String, f64)>> {
    let schema = &dataset.config.schema;
    let cases = validation_cases(cfg, &dataset.val, epoch);
    let mut metrics = Vec::with_capacity(cases.len());
    for case in cases {
        let (view, p) = predict_case(&state.params, case, cfg.patch_dims, schema)?;
        metrics.push(CaseMetrics::evaluate(
            format!("case_{:04}", case.id),
            &p.pred,
            &view.labels,
            &p.unc_prob,
            schema,
            cfg.unc_loss_mask,
        )?);
    }
    if metrics.is_empty() {
        return Ok(Vec::new());
    }
    mean_columns(&metrics)
}

/// Options for [`fit`] beyond the config.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where checkpoints, `metrics.csv` and `summary.json` go.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint directory.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (for interrupted-run tests).
    pub stop_after: Option<usize>,
    /// Called after every epoch with the new record.
    pub progress: Option<fn(&EpochRecord)>,
}

/// Trains per `cfg` on `dataset`. Returns the final state and the summary
/// over the last `summary_window` epochs.
pub fn fit(
    cfg: &TrainConfig,
    dataset: &Dataset,
    opts: &FitOptions,
) -> Result<(TrainState, RunSummary)> {
    cfg.validate()?;
    let refolded;
    let dataset = match cfg.fold {
        Some([k, f]) => {
            refolded = dataset.refold(k, f)?;
            &refolded
        }
        None => dataset,
    };
    let schema = &dataset.config.schema;
    if dataset.config.model != cfg.run_kind.model() {
        return Err(Error::Config(format!(
            "{:?} run needs {:?} data, dataset is {:?}",
            cfg.run_kind,
            cfg.run_kind.model(),
            dataset.config.model
        )));
    }
    let training = TrainingSet::new(&dataset.train, schema)?;
    let in_channels = dataset.train[0].image.channels();
    let net = cfg.net_config(in_channels, schema.class_count());

    let mut state = match &opts.resume {
        Some(dir) => {
            let (saved, state) = load_checkpoint(dir)?;
            if saved != *cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} was written with a different config",
                    dir.display()
                )));
            }
            if *state.params.config() != net {
                return Err(Error::Config(
                    "checkpoint network does not match the dataset".into(),
                ));
            }
            state
        }
        None => {
            let mut state = TrainState::new(net)?;
            state
                .params
                .set_seg_bias(&class_log_prior(&dataset.train, schema)?)?;
            state
        }
    };

    if let Some(out) = &opts.out_dir {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let last = opts.stop_after.map_or(cfg.epochs, |s| s.min(cfg.epochs));
    while state.epoch < last {
        let epoch = state.epoch;
        check_disjoint(&dataset.train, &dataset.val)?;
        let lr = lr_at(epoch, cfg)?;
        let targets = match cfg.target_refresh {
            TargetRefresh::Epoch => Some(epoch_targets(&state, &dataset.train, schema)?),
            TargetRefresh::Step => None,
        };
        let mut sums = [0.0f64; 4];
        for step in 0..cfg.train_batches_per_epoch {
            let batch = training.sample_batch(cfg, epoch, step, targets.as_deref())?;
            let r = match train_step(&mut state, cfg, schema, &batch, lr) {
                Ok(r) => r,
                Err(e @ Error::Divergence { .. }) => {
                    if let Some(out) = &opts.out_dir {
                        let path = out.join("divergence.txt");
                        let _ = fs::write(&path, format!("{e}\n"));
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            for (s, v) in sums.iter_mut().zip([r.dce, r.rmsd, r.corr, r.total]) {
                *s += v;
            }
        }
        let n = cfg.train_batches_per_epoch as f64;
        let mut record = EpochRecord {
            epoch,
            values: Default::default(),
        };
        record.values.insert("lr".into(), lr);
        for (name, s) in ["dce", "rmsd", "corr", "total"].iter().zip(sums) {
            record.values.insert(name.to_string(), s / n);
        }
        for (name, v) in validate_epoch(&state, cfg, dataset, epoch)? {
            record.values.insert(name, v);
        }
        state.epoch += 1;
        state.seg_digests.push(state.params.seg_digest());
        state.history.push(record);
        if let Some(cb) = opts.progress {
            cb(state.history.last().expect("just pushed"));
        }
        if let Some(out) = &opts.out_dir {
            save_checkpoint(&checkpoint_dir(out, epoch), cfg, &state)?;
            write_run_logs(out, schema, cfg, &state)?;
        }
    }
    let summary = summarize_run(&state.history, cfg.summary_window)?;
    Ok((state, summary))
}

/// Log of the add-one smoothed class frequencies over the training
/// labels. Used as the initial segmentation bias: with many small classes a
/// uniform start leaves background unpredicted for most of a short run.
pub fn class_log_prior(cases: &[Case], schema: &LabelSchema) -> Result<Vec<f64>> {
    let mut counts = vec![1.0f64; schema.class_count()];
    for case in cases {
        for &l in case.labels.labels() {
            let c = schema.class_of(l).ok_or_else(|| {
                Error::Data(format!(
                    "label {l} is not in schema '{}'",
                    schema.schema_id()
                ))
            })?;
            counts[c] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    Ok(counts.iter().map(|c| (c / total).ln()).collect())
}

fn write_run_logs(
    out: &Path,
    schema: &LabelSchema,
    cfg: &TrainConfig,
    state: &TrainState,
) -> Result<()> {
    let path = out.join("metrics.csv");
    fs::write(&path, metrics_csv(schema, &state.history)).map_err(|e| Error::io(&path, e))?;
    write_summary(
        &out.join("summary.json"),
        &summarize_run(&state.history, cfg.summary_window)?,
    )
}

/// Per-case uncertainty loss mask as a volume, for callers outside training.
pub fn loss_mask(gt: &LabelVolume, schema: &LabelSchema, cfg: &TrainConfig) -> Result<MaskVolume> {
    uncertainty_mask(gt, schema, cfg.unc_loss_mask)
}
