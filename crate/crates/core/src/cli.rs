//! The `uncseg` command line: `synth`, `train`, `eval`, `target`, `render`.
//!
//! Exit codes: 0 on success, 1 for usage mistakes, 2 for data and format
//! errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::labelspace::LabelSchema;
use crate::metrics::{
    case_csv, mean_columns, summarize_run, write_summary, CaseMetrics, EpochRecord,
};
use crate::render::{render_case, RenderOptions, GT_FILE, PRED_FILE, UNC_FILE};
use crate::synthdata::{generate_dataset, schema_by_id, Dataset, PhantomConfig};
use crate::trainer::{fit, load_checkpoint, predict_case, FitOptions, TrainConfig};
use crate::unctarget::target_from_labels;
use crate::voxvol::{read_vxv, write_vxv, Axis, MaskVolume, Volume};

pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Parser, Debug)]
#[command(
    name = "uncseg",
    version,
    about = "Uncertainty-aware tumor segmentation on synthetic volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset and its manifest.
    Synth(SynthArgs),
    /// Train a network; writes checkpoints, metrics.csv and summary.json.
    Train(TrainArgs),
    /// Predict and score cases with a checkpoint.
    Eval(EvalArgs),
    /// Compute the smoothed error-map target from saved label volumes.
    Target(TargetArgs),
    /// Render gt, prediction, error and uncertainty-overlay panels.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Phantom config JSON plus `n-cases` and `split`.
    #[arg(long)]
    config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Run output directory.
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many completed epochs.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory (`checkpoints/epoch_NNN`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which cases to score.
    #[arg(long, value_enum, default_value_t = SplitSel::Val)]
    split: SplitSel,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitSel {
    Train,
    Val,
    All,
}

#[derive(Args, Debug)]
struct TargetArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Builtin schema id (`cm`, `um`, `umN`) or a schema JSON file.
    #[arg(long)]
    schema: String,
    /// Output VXV (one float channel).
    #[arg(long)]
    out: PathBuf,
    /// Also write the binary error map here.
    #[arg(long)]
    error_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Case directory holding gt.vxv, pred.vxv and unc.vxv.
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated axes.
    #[arg(long, value_delimiter = ',', default_value = "axial")]
    axes: Vec<String>,
    /// Slice index; the central slice by default.
    #[arg(long)]
    index: Option<usize>,
    /// Schema id or file; defaults to the case's schema.json.
    #[arg(long)]
    schema: Option<String>,
    /// VXV volume; the overlay is drawn only where it is nonzero.
    #[arg(long)]
    overlay_mask: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Target(a) => target(&a),
        Command::Render(a) => render(&a),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Dataset request: phantom fields plus `n-cases` and `split`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub phantom: PhantomConfig,
    pub n_cases: usize,
    pub split: f64,
}

impl SynthConfig {
    pub fn from_json(value: Value) -> Result<SynthConfig> {
        let Value::Object(mut map) = value else {
            return Err(Error::Config("synth config must be a JSON object".into()));
        };
        let n_cases = match map.remove("n-cases") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Config("n-cases must be a positive integer".into()))?
                as usize,
            None => 40,
        };
        let split = match map.remove("split") {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Config("split must be a number".into()))?,
            None => 0.2,
        };
        let phantom: PhantomConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        Ok(SynthConfig {
            phantom,
            n_cases,
            split,
        })
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig::from_json(read_json(&a.config)?)?;
    let ds = generate_dataset(&cfg.phantom, cfg.n_cases, cfg.split)?;
    ds.save(&a.out)?;
    println!(
        "wrote {} training and {} validation cases to {}",
        ds.train.len(),
        ds.val.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg: TrainConfig =
        serde_json::from_value(read_json(&a.config)?).map_err(|e| Error::Config(e.to_string()))?;
    let ds = Dataset::load(&a.data)?;
    let opts = FitOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume.clone(),
        stop_after: a.stop_after,
        progress: Some(print_epoch),
    };
    let (state, _) = fit(&cfg, &ds, &opts)?;
    println!(
        "finished {} epochs; logs in {}",
        state.epoch,
        a.out.display()
    );
    Ok(())
}

fn print_epoch(r: &EpochRecord) {
    let cols: Vec<String> = r
        .values
        .iter()
        .map(|(k, v)| format!("{k}={v:.4}"))
        .collect();
    println!("epoch {:3} {}", r.epoch, cols.join(" "));
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (cfg, state) = load_checkpoint(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let schema = &ds.config.schema;
    let cases: Vec<_> = match a.split {
        SplitSel::Train => ds.train.iter().collect(),
        SplitSel::Val => ds.val.iter().collect(),
        SplitSel::All => ds.train.iter().chain(&ds.val).collect(),
    };
    if cases.is_empty() {
        return Err(Error::Data("no cases to evaluate".into()));
    }
    let mut scored = Vec::with_capacity(cases.len());
    for case in cases {
        let (view, p) = predict_case(&state.params, case, cfg.patch_dims, schema)?;
        let id = format!("case_{:04}", case.id);
        let dir = a.out.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_vxv(&Volume::Labels(view.labels.clone()), dir.join(GT_FILE))?;
        write_vxv(&Volume::Labels(p.pred.clone()), dir.join(PRED_FILE))?;
        write_vxv(&Volume::Scalar(p.unc_prob.clone()), dir.join(UNC_FILE))?;
        schema.save(dir.join(SCHEMA_FILE))?;
        scored.push(CaseMetrics::evaluate(
            id,
            &p.pred,
            &view.labels,
            &p.unc_prob,
            schema,
            cfg.unc_loss_mask,
        )?);
    }
    let path = a.out.join("metrics.csv");
    fs::write(&path, case_csv(&scored)).map_err(|e| Error::io(&path, e))?;
    let record = EpochRecord {
        epoch: state.epoch.saturating_sub(1),
        values: mean_columns(&scored)?.into_iter().collect(),
    };
    write_summary(&a.out.join("summary.json"), &summarize_run(&[record], 1)?)?;
    println!("scored {} cases into {}", scored.len(), a.out.display());
    Ok(())
}

/// Builtin id or a path to a schema JSON file.
pub fn resolve_schema(arg: &str) -> Result<LabelSchema> {
    let path = Path::new(arg);
    if path.is_file() {
        LabelSchema::load(path)
    } else {
        schema_by_id(arg)
    }
}

fn target(a: &TargetArgs) -> Result<()> {
    let schema = resolve_schema(&a.schema)?;
    let pred = read_vxv(&a.pred)?.into_labels()?.bind(&schema)?;
    let gt = read_vxv(&a.gt)?.into_labels()?.bind(&schema)?;
    let tumor = schema.tumor_labels()?;
    let t = target_from_labels(&pred, &gt, tumor)?;
    write_vxv(&Volume::Scalar(t.to_grid()), &a.out)?;
    if let Some(path) = &a.error_out {
        let e = crate::unctarget::error_map(&pred, &gt, tumor)?;
        let grid = crate::voxvol::VoxelGrid::from_f64(e.dims(), &e.to_mask().as_f64())?;
        write_vxv(&Volume::Scalar(grid), path)?;
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let schema = match &a.schema {
        Some(s) => resolve_schema(s)?,
        None => {
            let path = a.case.join(SCHEMA_FILE);
            if !path.is_file() {
                return Err(Error::Usage(format!(
                    "no --schema given and {} is missing",
                    path.display()
                )));
            }
            LabelSchema::load(path)?
        }
    };
    let axes = a
        .axes
        .iter()
        .map(|s| s.parse::<Axis>())
        .collect::<Result<Vec<_>>>()?;
    let overlay_mask = match &a.overlay_mask {
        None => None,
        Some(p) => Some(volume_mask(read_vxv(p)?)),
    };
    let opts = RenderOptions {
        index: a.index,
        overlay_mask,
    };
    let files = render_case(&a.case, &a.out, &axes, &schema, &opts)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn volume_mask(v: Volume) -> MaskVolume {
    match v {
        Volume::Labels(lv) => MaskVolume::from_fn(lv.dims(), |x, y, z| lv.get(x, y, z) != 0),
        Volume::Scalar(g) => MaskVolume::from_fn(g.dims(), |x, y, z| g.get(0, x, y, z) != 0.0),
    }
}
