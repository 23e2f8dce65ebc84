//! Slice rendering: label palettes, red uncertainty overlay, PPM output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::labelspace::{LabelId, LabelSchema, BACKGROUND};
use crate::unctarget::error_map;
use crate::voxvol::{extract_slice, read_vxv, Axis, LabelVolume, MaskVolume, VoxelGrid};

pub type Rgb = [u8; 3];

pub const TUMOR_COLOR: Rgb = [255, 255, 0];
pub const BACKGROUND_COLOR: Rgb = [0, 0, 0];
pub const OVERLAY_RED: Rgb = [255, 0, 0];
pub const WHOLE_TUMOR_COLOR: Rgb = [0, 255, 255];
pub const TUMOR_CORE_COLOR: Rgb = [128, 0, 128];
pub const ENHANCING_COLOR: Rgb = [0, 255, 0];
/// Error-panel color for non-error voxels with a nonzero ground-truth label.
pub const ERROR_PANEL_TISSUE: Rgb = [64, 64, 64];

const GOLDEN_TURN: f64 = 0.381_966_011_250_105_1;

/// Label → color table.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    colors: BTreeMap<LabelId, Rgb>,
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb {
    let h6 = h.fract() * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0 + 0.5).floor() as u8)
}

impl Palette {
    /// Healthy labels on a golden-angle hue sequence keyed by id, tumor
    /// labels yellow, background black.
    pub fn anatomy(schema: &LabelSchema) -> Result<Palette> {
        let tumor = schema.tumor_labels()?;
        let colors = schema
            .entries()
            .iter()
            .map(|e| {
                let c = if e.id == BACKGROUND {
                    BACKGROUND_COLOR
                } else if tumor.contains(&e.id) {
                    TUMOR_COLOR
                } else {
                    hsv(e.id as f64 * GOLDEN_TURN, 0.65, 0.9)
                };
                (e.id, c)
            })
            .collect();
        Ok(Palette { colors })
    }

    /// Tumor regions: whole tumor cyan, core purple, enhancing green, each
    /// voxel colored by the innermost region containing its label. Schemas
    /// without subregions fall back to [`Palette::anatomy`].
    pub fn regions(schema: &LabelSchema) -> Result<Palette> {
        if !schema.has_tumor_subregions() {
            return Palette::anatomy(schema);
        }
        let sub = schema.tumor_subregions()?;
        let mut p = Palette::anatomy(schema)?;
        p.colors.insert(sub.edema, WHOLE_TUMOR_COLOR);
        p.colors.insert(sub.necrotic, TUMOR_CORE_COLOR);
        p.colors.insert(sub.enhancing, ENHANCING_COLOR);
        Ok(p)
    }

    pub fn color(&self, label: LabelId) -> Rgb {
        self.colors.get(&label).copied().unwrap_or(BACKGROUND_COLOR)
    }
}

/// Which slice to draw and where the overlay applies.
#[derive(Clone, Copy, Debug)]
pub struct OverlaySpec<'a> {
    pub axis: Axis,
    pub index: usize,
    /// Restrict the red overlay to these voxels; `None` means image-wide.
    pub overlay_mask: Option<&'a MaskVolume>,
}

/// 8-bit RGB raster, rows top to bottom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, u: usize, v: usize) -> Rgb {
        let i = 3 * (u + self.width * v);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<RgbImage> {
        let bad = || Error::Format("not a binary PPM".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| bad())?
                    .to_string(),
            );
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let data = bytes.get(pos..).ok_or_else(bad)?.to_vec();
        if data.len() != 3 * width * height {
            return Err(Error::Length(format!(
                "PPM payload {} bytes, expected {}",
                data.len(),
                3 * width * height
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }
}

/// `(1 − u)·base + u·red`, u clamped to [0, 1], rounded half-up.
pub fn blend(base: Rgb, u: f64) -> Rgb {
    let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
    [0, 1, 2].map(|c| ((1.0 - u) * base[c] as f64 + u * OVERLAY_RED[c] as f64 + 0.5).floor() as u8)
}

/// Estimate of the blend weight that turned `base` into `out`, read from
/// the channel where red differs most from the base. `None` when the base
/// is pure red.
pub fn recover_u(base: Rgb, out: Rgb) -> Option<f64> {
    let (c, span) = (0..3)
        .map(|c| (c, OVERLAY_RED[c] as f64 - base[c] as f64))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("three channels");
    if span == 0.0 {
        return None;
    }
    Some(((out[c] as f64 - base[c] as f64) / span).clamp(0.0, 1.0))
}

/// Palette rendering of one slice with the uncertainty overlay.
pub fn render_slice(
    labels: &LabelVolume,
    unc: &VoxelGrid,
    spec: &OverlaySpec<'_>,
    palette: &Palette,
) -> Result<RgbImage> {
    if unc.channels() != 1 {
        return Err(Error::Shape(format!(
            "uncertainty must have one channel, got {}",
            unc.channels()
        )));
    }
    labels.dims().ensure_same(&unc.dims(), "render")?;
    if let Some(m) = spec.overlay_mask {
        labels.dims().ensure_same(&m.dims(), "overlay mask")?;
    }
    let lp = extract_slice(labels, spec.axis, spec.index)?;
    let up = extract_slice(unc, spec.axis, spec.index)?;
    let mp = spec
        .overlay_mask
        .map(|m| extract_slice(m, spec.axis, spec.index))
        .transpose()?;
    let mut data = Vec::with_capacity(3 * lp.data.len());
    for (i, (&l, &u)) in lp.data.iter().zip(&up.data).enumerate() {
        let on = mp.as_ref().is_none_or(|m| m.data[i] != 0);
        let u = if on { u as f64 } else { 0.0 };
        data.extend_from_slice(&blend(palette.color(l), u));
    }
    Ok(RgbImage {
        width: lp.width,
        height: lp.height,
        data,
    })
}

/// Plain palette rendering (no overlay).
pub fn render_labels(
    labels: &LabelVolume,
    axis: Axis,
    index: usize,
    palette: &Palette,
) -> Result<RgbImage> {
    let lp = extract_slice(labels, axis, index)?;
    Ok(RgbImage {
        width: lp.width,
        height: lp.height,
        data: lp.data.iter().flat_map(|&l| palette.color(l)).collect(),
    })
}

/// Red where the combined-tumor masks disagree, gray on labelled ground
/// truth, black elsewhere.
pub fn render_error(
    pred: &LabelVolume,
    gt: &LabelVolume,
    schema: &LabelSchema,
    axis: Axis,
    index: usize,
) -> Result<RgbImage> {
    let err = error_map(pred, gt, schema.tumor_labels()?)?.to_mask();
    let ep = extract_slice(&err, axis, index)?;
    let gp = extract_slice(gt, axis, index)?;
    let data = ep
        .data
        .iter()
        .zip(&gp.data)
        .flat_map(|(&e, &g)| {
            if e != 0 {
                OVERLAY_RED
            } else if g != BACKGROUND {
                ERROR_PANEL_TISSUE
            } else {
                BACKGROUND_COLOR
            }
        })
        .collect();
    Ok(RgbImage {
        width: ep.width,
        height: ep.height,
        data,
    })
}

pub const GT_FILE: &str = "gt.vxv";
pub const PRED_FILE: &str = "pred.vxv";
pub const UNC_FILE: &str = "unc.vxv";
pub const PANELS: [&str; 4] = ["gt", "pred", "error", "overlay"];

#[derive(Clone, Debug, Default)]
pub struct RenderOptions {
    /// Slice index; central slice of each axis when `None`.
    pub index: Option<usize>,
    pub overlay_mask: Option<MaskVolume>,
}

fn read_required(dir: &Path, name: &str) -> Result<crate::voxvol::Volume> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::Input(format!("missing {}", path.display())));
    }
    read_vxv(&path)
}

/// Reads `gt.vxv`, `pred.vxv` and `unc.vxv` from `case_dir` and writes
/// `case_{axis}_{panel}.ppm` for each axis into `out_dir`.
pub fn render_case(
    case_dir: &Path,
    out_dir: &Path,
    axes: &[Axis],
    schema: &LabelSchema,
    opts: &RenderOptions,
) -> Result<Vec<PathBuf>> {
    let gt = read_required(case_dir, GT_FILE)?
        .into_labels()?
        .bind(schema)?;
    let pred = read_required(case_dir, PRED_FILE)?
        .into_labels()?
        .bind(schema)?;
    let unc = read_required(case_dir, UNC_FILE)?.into_scalar()?;
    gt.dims().ensure_same(&pred.dims(), "render case")?;
    let regions = Palette::regions(schema)?;
    let anatomy = Palette::anatomy(schema)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for &axis in axes {
        let index = opts.index.unwrap_or(axis.extent(gt.dims()) / 2);
        let spec = OverlaySpec {
            axis,
            index,
            overlay_mask: opts.overlay_mask.as_ref(),
        };
        let images = [
            render_labels(&gt, axis, index, &regions)?,
            render_labels(&pred, axis, index, &regions)?,
            render_error(&pred, &gt, schema, axis, index)?,
            render_slice(&pred, &unc, &spec, &anatomy)?,
        ];
        for (panel, img) in PANELS.iter().zip(images) {
            let path = out_dir.join(format!("case_{}_{panel}.ppm", axis.name()));
            img.write_ppm(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
