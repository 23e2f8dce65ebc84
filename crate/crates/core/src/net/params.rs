use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::ConvGeom;
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::voxvol::{read_vxv, write_vxv, Dims, Volume, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NetConfig {
    pub in_channels: usize,
    /// Segmentation classes, background included.
    pub num_classes: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub base_width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_depth() -> usize {
    3
}

fn default_width() -> usize {
    8
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        if self.depth > 8 {
            return Err(Error::Config(format!(
                "network depth {} is unreasonably deep",
                self.depth
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.in_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn size_factor(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// Initial output of the uncertainty head.
pub const UNC_PRIOR: f64 = 0.01;

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Trunk,
    SegHead,
    UncHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub partition: Partition,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub geom: ConvGeom,
    pub weight: usize,
    pub bias: usize,
    pub relu: bool,
}

/// Indices into `Parameters::layers`, by role.
#[derive(Clone, Debug, Default)]
pub(crate) struct Layout {
    pub enc: Vec<[usize; 2]>,
    /// `down[l - 1]` feeds level `l`.
    pub down: Vec<usize>,
    /// `up[l]` brings level `l + 1` up to level `l`.
    pub up: Vec<usize>,
    pub dec: Vec<[usize; 2]>,
    pub seg_head: usize,
    pub unc_head: usize,
}

/// Named weight tensors partitioned into trunk, seg_head and unc_head.
#[derive(Clone, Debug)]
pub struct Parameters<T> {
    config: NetConfig,
    tensors: Vec<ParamTensor<T>>,
    layers: Vec<Layer>,
    layout: Layout,
}

impl<T: PartialEq> PartialEq for Parameters<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

struct Builder {
    specs: Vec<(String, Partition, ConvGeom, bool)>,
}

impl Builder {
    fn add(&mut self, name: String, partition: Partition, geom: ConvGeom, relu: bool) -> usize {
        self.specs.push((name, partition, geom, relu));
        self.specs.len() - 1
    }
}

fn conv3(cin: usize, cout: usize, stride: usize) -> ConvGeom {
    ConvGeom {
        cin,
        cout,
        kernel: 3,
        stride,
    }
}

fn architecture(cfg: &NetConfig) -> (Vec<(String, Partition, ConvGeom, bool)>, Layout) {
    let mut b = Builder { specs: Vec::new() };
    let mut layout = Layout::default();
    let t = Partition::Trunk;
    for level in 0..cfg.depth {
        let w = cfg.width(level);
        let cin = if level == 0 {
            cfg.in_channels
        } else {
            let prev = cfg.width(level - 1);
            let d = b.add(format!("down{level}"), t, conv3(prev, w, 2), true);
            layout.down.push(d);
            w
        };
        let a = b.add(format!("enc{level}a"), t, conv3(cin, w, 1), true);
        let c = b.add(format!("enc{level}b"), t, conv3(w, w, 1), true);
        layout.enc.push([a, c]);
    }
    layout.up = vec![0; cfg.depth - 1];
    layout.dec = vec![[0, 0]; cfg.depth - 1];
    for level in (0..cfg.depth - 1).rev() {
        let w = cfg.width(level);
        layout.up[level] = b.add(
            format!("up{level}"),
            t,
            conv3(cfg.width(level + 1), w, 1),
            true,
        );
        let a = b.add(format!("dec{level}a"), t, conv3(2 * w, w, 1), true);
        let c = b.add(format!("dec{level}b"), t, conv3(w, w, 1), true);
        layout.dec[level] = [a, c];
    }
    let head = |cout| ConvGeom {
        cin: cfg.base_width,
        cout,
        kernel: 1,
        stride: 1,
    };
    layout.seg_head = b.add(
        "seg_head".into(),
        Partition::SegHead,
        head(cfg.num_classes),
        false,
    );
    layout.unc_head = b.add("unc_head".into(), Partition::UncHead, head(1), false);
    (b.specs, layout)
}

impl<T: Real> Parameters<T> {
    /// Variance-scaled normal weights (He for ReLU layers, LeCun for the
    /// segmentation head), zero biases, deterministic in `cfg.seed`.
    ///
    /// The uncertainty head starts with zero weights and its bias at
    /// `logit(UNC_PRIOR)`. Its targets are sparse smoothed error maps with a
    /// masked mean near 0.01 once segmentation works; starting at 0.5 makes
    /// the optimizer lower the output through the non-negative features
    /// instead of the bias, which anti-correlates it with the errors.
    pub fn init(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (specs, layout) = architecture(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tensors = Vec::with_capacity(specs.len() * 2);
        let mut layers = Vec::with_capacity(specs.len());
        for (name, partition, geom, relu) in specs {
            let fan_in = (geom.cin * geom.taps()) as f64;
            let gain = if relu { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            let w: Vec<T> = if partition == Partition::UncHead {
                vec![T::zero(); geom.weight_len()]
            } else {
                (0..geom.weight_len())
                    .map(|_| T::of(normal.sample(&mut rng)))
                    .collect()
            };
            let k = geom.kernel;
            tensors.push(ParamTensor {
                name: format!("{name}.weight"),
                partition,
                shape: vec![geom.cout, geom.cin, k, k, k],
                data: w,
            });
            tensors.push(ParamTensor {
                name: format!("{name}.bias"),
                partition,
                shape: vec![geom.cout],
                data: if partition == Partition::UncHead {
                    vec![T::of((UNC_PRIOR / (1.0 - UNC_PRIOR)).ln()); geom.cout]
                } else {
                    vec![T::zero(); geom.cout]
                },
            });
            layers.push(Layer {
                geom,
                weight: tensors.len() - 2,
                bias: tensors.len() - 1,
                relu,
            });
        }
        Ok(Parameters {
            config: cfg,
            tensors,
            layers,
            layout,
        })
    }

    /// Overwrites the segmentation head's biases, one per class.
    pub fn set_seg_bias(&mut self, bias: &[f64]) -> Result<()> {
        let t = &mut self.tensors[self.layers[self.layout.seg_head].bias];
        if t.data.len() != bias.len() {
            return Err(Error::Length(format!(
                "{} segmentation biases for {} classes",
                bias.len(),
                t.data.len()
            )));
        }
        for (d, &b) in t.data.iter_mut().zip(bias) {
            *d = T::of(b);
        }
        Ok(())
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_tensors(cfg: NetConfig, tensors: Vec<ParamTensor<T>>) -> Result<Self> {
        let template = Self::init(cfg)?;
        if template.tensors.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                template.tensors.len(),
                tensors.len()
            )));
        }
        for (want, got) in template.tensors.iter().zip(&tensors) {
            if want.name != got.name || want.shape != got.shape || want.partition != got.partition {
                return Err(Error::Shape(format!(
                    "parameter '{}' {:?} does not match expected '{}' {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            if got.data.len() != want.data.len() {
                return Err(Error::Length(format!(
                    "parameter '{}' has wrong length",
                    got.name
                )));
            }
            if got.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "parameter '{}' is not finite",
                    got.name
                )));
            }
        }
        Ok(Parameters {
            tensors,
            ..template
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub(crate) fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn data(&self, tensor: usize) -> &[T] {
        &self.tensors[tensor].data
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    partition: t.partition,
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
            layers: self.layers.clone(),
            layout: self.layout.clone(),
        }
    }

    /// SHA-256 over every trunk and seg_head value, in tensor order.
    pub fn seg_digest(&self) -> String {
        let mut h = Sha256::new();
        for t in self
            .tensors
            .iter()
            .filter(|t| t.partition != Partition::UncHead)
        {
            h.update(t.name.as_bytes());
            for v in &t.data {
                h.update(v.f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    file: String,
    partition: Partition,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct CheckpointIndex {
    config: NetConfig,
    tensors: Vec<IndexEntry>,
}

pub(crate) const INDEX_FILE: &str = "index.json";

impl Parameters<f32> {
    /// Writes one VXV1 scalar volume per tensor plus `index.json`.
    ///
    /// Weights `[cout, cin, k, k, k]` become `cout * cin` channels of a k^3
    /// grid; biases become `cout` channels of a single voxel.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let file = format!("{}.vxv", t.name);
            let grid = tensor_grid(t)?;
            write_vxv(&Volume::Scalar(grid), dir.join(&file))?;
            entries.push(IndexEntry {
                name: t.name.clone(),
                file,
                partition: t.partition,
                shape: t.shape.clone(),
            });
        }
        let index = CheckpointIndex {
            config: self.config,
            tensors: entries,
        };
        let path = dir.join(INDEX_FILE);
        fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: CheckpointIndex = serde_json::from_str(&text)?;
        let mut tensors = Vec::with_capacity(index.tensors.len());
        for e in index.tensors {
            let grid = read_vxv(dir.join(&e.file))?.into_scalar()?;
            tensors.push(ParamTensor {
                name: e.name,
                partition: e.partition,
                shape: e.shape,
                data: grid.into_data(),
            });
        }
        Parameters::from_tensors(index.config, tensors)
    }
}

fn tensor_grid(t: &ParamTensor<f32>) -> Result<VoxelGrid> {
    let (channels, dims) = match t.shape.as_slice() {
        [cout, cin, k, _, _] => (cout * cin, Dims::cube(*k)?),
        [cout] => (*cout, Dims::cube(1)?),
        other => return Err(Error::Shape(format!("unsupported tensor shape {other:?}"))),
    };
    VoxelGrid::new(dims, channels, t.data.clone())
}

/// Per-tensor gradient buffers aligned with [`Parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(params: &Parameters<T>) -> Self {
        Gradients {
            tensors: params
                .tensors
                .iter()
                .map(|t| vec![T::zero(); t.data.len()])
                .collect(),
        }
    }

    /// Gradient buffers with given values; shapes must match `params`.
    pub fn from_tensors(params: &Parameters<T>, tensors: Vec<Vec<T>>) -> Result<Self> {
        if tensors.len() != params.tensors.len()
            || tensors
                .iter()
                .zip(&params.tensors)
                .any(|(g, p)| g.len() != p.data.len())
        {
            return Err(Error::Shape(
                "gradient tensors do not match parameter shapes".into(),
            ));
        }
        Ok(Gradients { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &[T] {
        &self.tensors[i]
    }

    pub(crate) fn accumulate(&mut self, tensor: usize, g: &[T]) {
        for (a, &b) in self.tensors[tensor].iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for v in t {
                *v = *v * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}
