//! Procedural brain phantoms with nested tumors.
//!
//! Anatomy is an ellipsoid split into a cortical shell, an outer subcortical
//! shell and an inner core, each cut into azimuth wedges and upper/lower
//! halves. Tumors are spheres: necrotic core, enhancing rim and edema halo
//! for CM schemas, one tumor label for UM schemas.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{
    builtin_schema, um_schema, GroupName, LabelId, LabelSchema, ModelKind, BACKGROUND,
};
use crate::voxvol::{read_vxv, write_vxv, Dims, LabelVolume, Volume, VoxelGrid};

const BRAIN_SEMI_AXIS: f64 = 0.42;
const CORTEX_INNER: f64 = 0.75;
const SUBCORTEX_INNER: f64 = 0.45;
const NECROTIC_RADIUS: f64 = 0.35;
const ENHANCING_RADIUS: f64 = 0.6;
/// Tumor centers stay within this normalized radius of the brain center.
const TUMOR_CENTER_LIMIT: f64 = 0.6;
/// Brightest UM healthy mean; the tumor sits alone at 1.0.
const HEALTHY_TOP: f64 = 0.85;

/// Intensity rank of each CM tissue class per modality:
/// air, gray matter, white matter, deep nuclei, necrotic, edema, enhancing.
/// Edema sits one rank from white matter in two modalities and from deep
/// nuclei in three, so the whole-tumor margin is the low-contrast boundary.
const CM_RANKS: [[usize; 7]; 4] = [
    [0, 3, 5, 4, 1, 5, 6],
    [0, 2, 3, 1, 4, 2, 6],
    [0, 4, 2, 3, 5, 2, 1],
    [0, 1, 2, 3, 4, 3, 5],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhantomDoc", into = "PhantomDoc")]
pub struct PhantomConfig {
    pub model: ModelKind,
    pub dims: Dims,
    pub modalities: usize,
    pub schema: LabelSchema,
    pub tumor_count_range: [usize; 2],
    pub tumor_radius_range: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Schema given either as a builtin id (`"cm"`, `"um"`, `"um20"`) or inline.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SchemaRef {
    Builtin(String),
    Inline(LabelSchema),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct PhantomDoc {
    model: ModelKind,
    #[serde(default)]
    dims: Option<Dims>,
    #[serde(default)]
    modalities: Option<usize>,
    #[serde(default)]
    schema: Option<SchemaRef>,
    #[serde(default)]
    tumor_count_range: Option<[usize; 2]>,
    #[serde(default)]
    tumor_radius_range: Option<[f64; 2]>,
    #[serde(default)]
    noise_sigma: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

impl TryFrom<PhantomDoc> for PhantomConfig {
    type Error = Error;

    fn try_from(doc: PhantomDoc) -> Result<Self> {
        let mut cfg = PhantomConfig::default_for(doc.model);
        if let Some(d) = doc.dims {
            cfg.dims = d;
        }
        if let Some(m) = doc.modalities {
            cfg.modalities = m;
        }
        match doc.schema {
            Some(SchemaRef::Builtin(id)) => cfg.schema = schema_by_id(&id)?,
            Some(SchemaRef::Inline(s)) => cfg.schema = s,
            None => {}
        }
        if let Some(r) = doc.tumor_count_range {
            cfg.tumor_count_range = r;
        }
        if let Some(r) = doc.tumor_radius_range {
            cfg.tumor_radius_range = r;
        }
        if let Some(s) = doc.noise_sigma {
            cfg.noise_sigma = s;
        }
        if let Some(s) = doc.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<PhantomConfig> for PhantomDoc {
    fn from(c: PhantomConfig) -> Self {
        let builtin = schema_by_id(c.schema.schema_id()).ok();
        let schema = if builtin.as_ref() == Some(&c.schema) {
            SchemaRef::Builtin(c.schema.schema_id().to_string())
        } else {
            SchemaRef::Inline(c.schema)
        };
        PhantomDoc {
            model: c.model,
            dims: Some(c.dims),
            modalities: Some(c.modalities),
            schema: Some(schema),
            tumor_count_range: Some(c.tumor_count_range),
            tumor_radius_range: Some(c.tumor_radius_range),
            noise_sigma: Some(c.noise_sigma),
            seed: Some(c.seed),
        }
    }
}

/// Resolves `"cm"`, `"um"` and `"um<N>"` (N healthy labels).
pub fn schema_by_id(id: &str) -> Result<LabelSchema> {
    match id {
        "cm" => Ok(builtin_schema(ModelKind::Cm)),
        "um" => Ok(builtin_schema(ModelKind::Um)),
        other => match other
            .strip_prefix("um")
            .and_then(|n| n.parse::<usize>().ok())
        {
            Some(n) => um_schema(n),
            None => Err(Error::Config(format!("unknown builtin schema '{other}'"))),
        },
    }
}

impl PhantomConfig {
    /// Desk defaults: 32³, four modalities for CM and one for UM.
    pub fn default_for(model: ModelKind) -> Self {
        let (modalities, noise_sigma) = match model {
            ModelKind::Cm => (4, 0.05),
            ModelKind::Um => (1, 0.005),
        };
        PhantomConfig {
            model,
            dims: Dims {
                nx: 32,
                ny: 32,
                nz: 32,
            },
            modalities,
            schema: builtin_schema(model),
            tumor_count_range: [1, 2],
            tumor_radius_range: [4.0, 7.0],
            noise_sigma,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.modalities == 0 {
            return Err(Error::Config("modalities must be at least 1".into()));
        }
        let [cmin, cmax] = self.tumor_count_range;
        if cmin > cmax {
            return Err(Error::Config(format!(
                "tumor count range [{cmin}, {cmax}] is inverted"
            )));
        }
        let [rmin, rmax] = self.tumor_radius_range;
        if !(rmin > 0.0 && rmin <= rmax && rmax.is_finite()) {
            return Err(Error::Config(format!(
                "tumor radius range [{rmin}, {rmax}] must be positive and ordered"
            )));
        }
        let smallest = self.dims.nx.min(self.dims.ny).min(self.dims.nz) as f64;
        if 2.0 * rmax >= smallest {
            return Err(Error::Config(format!(
                "tumor radius {rmax} does not fit inside {}",
                self.dims
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma {} must be finite and non-negative",
                self.noise_sigma
            )));
        }
        match self.model {
            ModelKind::Cm => {
                if !self.schema.has_tumor_subregions() {
                    return Err(Error::Config(format!(
                        "CM tumor structure needs necrotic/edema/enhancing labels; schema '{}' has none",
                        self.schema.schema_id()
                    )));
                }
            }
            ModelKind::Um => {
                if self.schema.has_tumor_subregions() {
                    return Err(Error::Config(format!(
                        "UM phantoms use one tumor label; schema '{}' declares tumor subregions",
                        self.schema.schema_id()
                    )));
                }
                let tumor = self.schema.group(GroupName::TumorAll)?;
                if tumor.len() != 1 {
                    return Err(Error::Config(
                        "UM schema must have exactly one tumor label".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Same settings with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        PhantomConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy)]
struct Tumor {
    center: [f64; 3],
    radius: f64,
}

/// Healthy region layout: which schema label each (shell, half, wedge) gets.
struct Anatomy {
    cortical: Vec<LabelId>,
    outer: Vec<LabelId>,
    inner: Vec<LabelId>,
}

impl Anatomy {
    fn for_schema(schema: &LabelSchema) -> Anatomy {
        let set = |g| {
            schema
                .group(g)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_else(|_| Vec::new())
        };
        let cortical: Vec<LabelId> = set(GroupName::Cortical);
        let sub: Vec<LabelId> = set(GroupName::Subcortical);
        let n_outer = if sub.len() <= 1 {
            sub.len()
        } else {
            ((sub.len() * 14) as f64 / 22.0)
                .round()
                .clamp(1.0, (sub.len() - 1) as f64) as usize
        };
        let (outer, inner) = sub.split_at(n_outer);
        Anatomy {
            cortical,
            outer: outer.to_vec(),
            inner: inner.to_vec(),
        }
    }

    /// Label for a voxel at normalized radius `rho`, azimuth `phi` in
    /// [0, 1) turns, and upper half flag.
    fn label(&self, rho: f64, phi: f64, upper: bool) -> LabelId {
        let pick = |labels: &[LabelId]| -> LabelId {
            if labels.is_empty() {
                return BACKGROUND;
            }
            let wedges = labels.len().div_ceil(2);
            let wedge = ((phi * wedges as f64) as usize).min(wedges - 1);
            let region = usize::from(upper) * wedges + wedge;
            labels[region * labels.len() / (2 * wedges)]
        };
        if rho > CORTEX_INNER {
            pick(&self.cortical)
        } else if rho > SUBCORTEX_INNER {
            pick(&self.outer)
        } else {
            pick(&self.inner)
        }
    }
}

/// Generates one (image, labels) pair. Deterministic in `cfg`.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(VoxelGrid, LabelVolume)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dims;
    let size = d.as_array().map(|n| n as f64);
    let center = size.map(|n| (n - 1.0) / 2.0);
    let semi: Vec<f64> = size
        .iter()
        .map(|n| BRAIN_SEMI_AXIS * n * (1.0 + rng.gen_range(-0.05..0.05)))
        .collect();
    let phase: f64 = rng.gen_range(0.0..1.0);

    let count = rng.gen_range(cfg.tumor_count_range[0]..=cfg.tumor_count_range[1]);
    let mut tumors = Vec::with_capacity(count);
    for _ in 0..count {
        // Uniform in the central ellipsoid by rejection.
        let u = loop {
            let u: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                break u;
            }
        };
        let c = [0, 1, 2].map(|a| center[a] + TUMOR_CENTER_LIMIT * semi[a] * u[a]);
        let radius = if cfg.tumor_radius_range[0] == cfg.tumor_radius_range[1] {
            cfg.tumor_radius_range[0]
        } else {
            rng.gen_range(cfg.tumor_radius_range[0]..cfg.tumor_radius_range[1])
        };
        tumors.push(Tumor { center: c, radius });
    }

    let anatomy = Anatomy::for_schema(&cfg.schema);
    let sub = match cfg.model {
        ModelKind::Cm => Some(cfg.schema.tumor_subregions()?),
        ModelKind::Um => None,
    };
    let um_tumor = match cfg.model {
        ModelKind::Um => *cfg
            .schema
            .group(GroupName::TumorAll)?
            .iter()
            .next()
            .expect("validated"),
        ModelKind::Cm => BACKGROUND,
    };

    let n = d.voxels();
    let mut labels = vec![BACKGROUND; n];
    // Intensity key: CM tissue index, or schema class index for UM.
    let mut key = vec![0usize; n];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let p = [x as f64, y as f64, z as f64];
                let q = [0, 1, 2].map(|a| (p[a] - center[a]) / semi[a]);
                let rho = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                let i = d.index(x, y, z);
                if rho > 1.0 {
                    continue;
                }
                let phi = (q[1].atan2(q[0]) / std::f64::consts::TAU + 1.0 + phase).fract();
                let upper = q[2] >= 0.0;
                let dist = tumors
                    .iter()
                    .map(|t| {
                        let r2: f64 = (0..3).map(|a| (p[a] - t.center[a]).powi(2)).sum();
                        r2.sqrt() / t.radius
                    })
                    .fold(f64::INFINITY, f64::min);
                let (label, tissue) = match (&sub, dist <= 1.0) {
                    (Some(s), true) if dist <= NECROTIC_RADIUS => (s.necrotic, 4),
                    (Some(s), true) if dist <= ENHANCING_RADIUS => (s.enhancing, 6),
                    (Some(s), true) => (s.edema, 5),
                    (Some(_), false) if rho > CORTEX_INNER => (anatomy.label(rho, phi, upper), 1),
                    (Some(_), false) if rho > SUBCORTEX_INNER => {
                        (anatomy.label(rho, phi, upper), 2)
                    }
                    (Some(_), false) => (anatomy.label(rho, phi, upper), 3),
                    (None, true) => (um_tumor, 0),
                    (None, false) => (anatomy.label(rho, phi, upper), 0),
                };
                labels[i] = label;
                key[i] = match cfg.model {
                    ModelKind::Cm => tissue,
                    ModelKind::Um => cfg
                        .schema
                        .class_of(label)
                        .expect("generated labels are in schema"),
                };
            }
        }
    }

    let means = intensity_means(cfg);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(cfg.modalities * n);
    for m in 0..cfg.modalities {
        for &k in &key {
            let mut v = means[m][k];
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v as f32);
        }
    }
    let image = VoxelGrid::new(d, cfg.modalities, data)?;
    let labels = LabelVolume::new(d, labels, &cfg.schema)?;
    Ok((image, labels))
}

/// Per-modality mean intensity of each intensity class, in [0, 1].
fn intensity_means(cfg: &PhantomConfig) -> Vec<Vec<f64>> {
    match cfg.model {
        ModelKind::Cm => (0..cfg.modalities)
            .map(|m| {
                CM_RANKS[m % CM_RANKS.len()]
                    .iter()
                    .map(|&r| r as f64 / 6.0)
                    .collect()
            })
            .collect(),
        ModelKind::Um => {
            // Background lowest, tumor highest and set apart, healthy labels
            // shuffled in [0, HEALTHY_TOP] by a fixed permutation that
            // differs per modality.
            let k = cfg.schema.class_count();
            let tumor_class = k - 1;
            (0..cfg.modalities)
                .map(|m| {
                    let mut ranks: Vec<usize> = (1..tumor_class).collect();
                    let mut prng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + m as u64);
                    for i in (1..ranks.len()).rev() {
                        ranks.swap(i, prng.gen_range(0..=i));
                    }
                    let mut means = vec![0.0; k];
                    for (class, &r) in (1..tumor_class).zip(&ranks) {
                        means[class] = HEALTHY_TOP * r as f64 / (k - 2) as f64;
                    }
                    means[tumor_class] = 1.0;
                    means
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Case {
    pub id: usize,
    pub seed: u64,
    pub image: VoxelGrid,
    pub labels: LabelVolume,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: PhantomConfig,
    pub split_fraction: f64,
    pub train: Vec<Case>,
    pub val: Vec<Case>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Manifest {
    pub seed: u64,
    pub split: f64,
    pub schema_id: String,
    pub n_cases: usize,
    pub phantom: PhantomConfig,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Validation size for `n_cases` at `split_fraction`.
pub fn split_sizes(n_cases: usize, split_fraction: f64) -> Result<(usize, usize)> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {split_fraction} must be in (0, 1)"
        )));
    }
    if n_cases < 2 {
        return Err(Error::Config(format!(
            "need at least 2 cases, got {n_cases}"
        )));
    }
    let val = (split_fraction * n_cases as f64).round() as usize;
    if val == 0 || val >= n_cases {
        return Err(Error::Config(format!(
            "{n_cases} cases at split {split_fraction} leave an empty side"
        )));
    }
    Ok((n_cases - val, val))
}

/// Case `i` uses seed `cfg.seed + i`; the last `round(split·n)` cases validate.
pub fn generate_dataset(
    cfg: &PhantomConfig,
    n_cases: usize,
    split_fraction: f64,
) -> Result<Dataset> {
    cfg.validate()?;
    let (n_train, _) = split_sizes(n_cases, split_fraction)?;
    let mut cases = (0..n_cases)
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let (image, labels) = generate_phantom(&cfg.with_seed(seed))?;
            Ok(Case {
                id: i,
                seed,
                image,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let val = cases.split_off(n_train);
    Ok(Dataset {
        config: cfg.clone(),
        split_fraction,
        train: cases,
        val,
    })
}

/// Train/validation case ids for fold `fold` of `k` contiguous folds.
pub fn kfold_ids(n_cases: usize, k: usize, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 2 || fold >= k || n_cases < k {
        return Err(Error::Config(format!(
            "invalid fold {fold} of {k} over {n_cases} cases"
        )));
    }
    let lo = fold * n_cases / k;
    let hi = (fold + 1) * n_cases / k;
    let val: Vec<usize> = (lo..hi).collect();
    let train = (0..n_cases).filter(|i| !(lo..hi).contains(i)).collect();
    Ok((train, val))
}

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            seed: self.config.seed,
            split: self.split_fraction,
            schema_id: self.config.schema.schema_id().to_string(),
            n_cases: self.train.len() + self.val.len(),
            phantom: self.config.clone(),
            train: self.train.iter().map(|c| c.id).collect(),
            val: self.val.iter().map(|c| c.id).collect(),
        }
    }

    /// Re-partitions all cases by id for k-fold use.
    pub fn refold(&self, k: usize, fold: usize) -> Result<Dataset> {
        let mut all: Vec<Case> = self.train.iter().chain(&self.val).cloned().collect();
        all.sort_by_key(|c| c.id);
        let (_, val_ids) = kfold_ids(all.len(), k, fold)?;
        let val_ids: BTreeSet<usize> = val_ids.into_iter().collect();
        let (val, train): (Vec<Case>, Vec<Case>) =
            all.into_iter().partition(|c| val_ids.contains(&c.id));
        Ok(Dataset {
            config: self.config.clone(),
            split_fraction: val.len() as f64 / (train.len() + val.len()) as f64,
            train,
            val,
        })
    }

    /// Writes `case_XXXX_img.vxv`, `case_XXXX_lab.vxv` and `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for case in self.train.iter().chain(&self.val) {
            write_vxv(
                &Volume::Scalar(case.image.clone()),
                image_path(dir, case.id),
            )?;
            write_vxv(
                &Volume::Labels(case.labels.clone()),
                label_path(dir, case.id),
            )?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let schema = &m.phantom.schema;
        let load = |id: usize| -> Result<Case> {
            let image = read_vxv(image_path(dir, id))?.into_scalar()?;
            let labels = read_vxv(label_path(dir, id))?.into_labels()?.bind(schema)?;
            Ok(Case {
                id,
                seed: m.seed.wrapping_add(id as u64),
                image,
                labels,
            })
        };
        Ok(Dataset {
            config: m.phantom.clone(),
            split_fraction: m.split,
            train: m.train.iter().map(|&i| load(i)).collect::<Result<_>>()?,
            val: m.val.iter().map(|&i| load(i)).collect::<Result<_>>()?,
        })
    }
}

pub fn image_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("case_{id:04}_img.vxv"))
}

pub fn label_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("case_{id:04}_lab.vxv"))
}
