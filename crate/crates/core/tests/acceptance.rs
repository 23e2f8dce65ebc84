//! One line per acceptance criterion, then a single assertion over all of
//! them. The three desk-scale training runs dominate the runtime.
//!
//! cargo test --release -p uncseg --test acceptance -- --nocapture

mod common;

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use uncseg::labelspace::{GroupName, ModelKind};
use uncseg::losses::kernels;
use uncseg::metrics::dsc;
use uncseg::render::{recover_u, render_slice, OverlaySpec, Palette};
use uncseg::synthdata::{generate_dataset, generate_phantom, PhantomConfig};
use uncseg::taxonomy::{build_case, TaxonomyKind};
use uncseg::trainer::{fit, FitOptions, RunKind, TrainConfig};
use uncseg::unctarget::{box_smooth_3, ErrorMap};
use uncseg::voxvol::{extract_slice, Axis, Dims, MaskVolume};

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, detail: String) {
        println!(
            "criterion {n:2}: {} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(n);
        }
    }
}

fn criterion_1(r: &mut Report) {
    let fx = grad_fixture(1);
    let (worst, checked) = isolation_max_fd(&fx, FD_STEP);
    let undetached = undetached_max_fd(&fx, FD_STEP);
    r.line(
        1,
        worst <= 1e-6 && checked > 0,
        format!("max |fd| over {checked} trunk/seg parameters = {worst:.2e} (without detachment {undetached:.2e})"),
    );
}

fn criterion_2(r: &mut Report) {
    let fx = grad_fixture(1);
    let dce = dce_param_check(&fx, FD_STEP);
    let unc = unc_param_check(&fx, FD_STEP);
    let out = output_grad_check(1, FD_STEP);
    let worst = [dce.branch, unc].into_iter().chain(out).fold(0.0, f64::max);
    r.line(
        2,
        worst <= 1e-3,
        format!(
            "relative errors: dice_ce params {:.2e} (two-point {:.2e}), unc head {unc:.2e}, dice_ce/logits {:.2e}, rmsd/U {:.2e}, corr/U {:.2e}, combined/U {:.2e}",
            dce.branch, dce.branch_two_point, out[0], out[1], out[2], out[3]
        ),
    );
}

fn brute_smooth(d: Dims, x: &[u8]) -> Vec<f64> {
    let n = d.as_array().map(|v| v as i64);
    let mut out = vec![0.0; d.voxels()];
    for i in 0..d.voxels() {
        let (x0, y0, z0) = d.coords(i);
        let mut s = 0.0;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (a, b, c) = (x0 as i64 + dx, y0 as i64 + dy, z0 as i64 + dz);
                    if (0..n[0]).contains(&a) && (0..n[1]).contains(&b) && (0..n[2]).contains(&c) {
                        s += x[(a + n[0] * (b + n[1] * c)) as usize] as f64;
                    }
                }
            }
        }
        out[i] = s / 27.0;
    }
    out
}

fn criterion_3(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = Dims::cube(6).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<u8> = (0..d.voxels()).map(|_| rng.gen_range(0..2)).collect();
        let got = box_smooth_3(&ErrorMap::new(d, x.clone()).unwrap());
        for (g, w) in got.values().iter().zip(brute_smooth(d, &x)) {
            worst = worst.max((g - w).abs());
        }
    }
    let mut single = vec![0u8; d.voxels()];
    single[d.index(2, 3, 2)] = 1;
    let s = box_smooth_3(&ErrorMap::new(d, single).unwrap());
    let exact = (0..d.voxels()).all(|i| {
        let (x, y, z) = d.coords(i);
        let near = x.abs_diff(2) <= 1 && y.abs_diff(3) <= 1 && z.abs_diff(2) <= 1;
        s.values()[i] == if near { 1.0 / 27.0 } else { 0.0 }
    });
    r.line(
        3,
        worst <= 1e-6 && exact,
        format!("max deviation {worst:.1e} on 100 maps, single voxel exactly 1/27: {exact}"),
    );
}

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = Dims::cube(8).unwrap();
    let mut ok = true;
    for _ in 0..100 {
        let density: f64 = rng.gen_range(0.05..0.95);
        let a: Vec<u8> = (0..d.voxels())
            .map(|_| rng.gen_bool(density) as u8)
            .collect();
        let b: Vec<u8> = (0..d.voxels())
            .map(|_| rng.gen_bool(density) as u8)
            .collect();
        let inter = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| **x == 1 && **y == 1)
            .count();
        let total = a.iter().chain(&b).filter(|&&x| x == 1).count();
        let want = if total == 0 {
            1.0
        } else {
            2.0 * inter as f64 / total as f64
        };
        let (ma, mb) = (
            MaskVolume::new(d, a).unwrap(),
            MaskVolume::new(d, b).unwrap(),
        );
        let ab = dsc(&ma, &mb).unwrap();
        ok &= ab == want && ab == dsc(&mb, &ma).unwrap() && dsc(&ma, &ma).unwrap() == 1.0;
    }
    r.line(
        4,
        ok,
        "100 random 8³ pairs: exact, symmetric, identity".into(),
    );
}

fn criterion_5(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = uncseg::losses::LossWeights::default().epsilon;
    let (mut min_rmsd, mut max_corr, mut self_dev, mut affine_dev) =
        (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(40..200);
        let u: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.7) as u8 as f64).collect();
        let (a, b) = (rng.gen_range(0.01..100.0), rng.gen_range(-10.0..10.0));
        min_rmsd = min_rmsd.min(kernels::rmsd(&u, &e, &m, eps).value);
        let c = kernels::corr(&u, &e, &m, eps).value;
        max_corr = max_corr.max(c.abs());
        self_dev = self_dev.max((kernels::corr(&u, &u, &m, eps).value - 1.0).abs());
        let mapped: Vec<f64> = u.iter().map(|x| a * x + b).collect();
        affine_dev = affine_dev.max((kernels::corr(&mapped, &e, &m, eps).value - c).abs());
    }
    r.line(
        5,
        min_rmsd >= 0.0 && max_corr <= 1.0 + 1e-6 && self_dev <= 1e-6 && affine_dev <= 1e-6,
        format!("min rmsd {min_rmsd:.3}, max |corr| {max_corr:.6}, |corr(U,U)-1| {self_dev:.1e}, affine drift {affine_dev:.1e}"),
    );
}

fn desk_run(kind: RunKind) -> (uncseg::trainer::TrainState, uncseg::metrics::RunSummary) {
    let phantom = PhantomConfig {
        seed: 7,
        ..PhantomConfig::default_for(kind.model())
    };
    let ds = generate_dataset(&phantom, 40, 0.2).unwrap();
    let cfg = TrainConfig {
        seed: 7,
        summary_window: 5,
        ..TrainConfig::desk(kind)
    };
    fit(&cfg, &ds, &FitOptions::default()).unwrap()
}

fn criteria_6_7_8(r: &mut Report) {
    let (cm1, s1) = desk_run(RunKind::CM1);
    let wt = s1.get("dsc_whole_tumor").unwrap();
    let corr = s1.get("unc_corr").unwrap();
    r.line(
        6,
        wt >= 0.70 && corr >= 0.30,
        format!(
            "CM1 final-5 whole-tumor DSC {wt:.3}, UNC corr {corr:.3}, UNC rmsd {:.3}",
            s1.get("unc_rmsd").unwrap()
        ),
    );

    let (cm2, s2) = desk_run(RunKind::CM2);
    let wt2 = s2.get("dsc_whole_tumor").unwrap();
    let same = cm1.seg_digests == cm2.seg_digests;
    r.line(
        7,
        same && (wt - wt2).abs() <= 0.02,
        format!("seg trajectories identical over {} epochs: {same}; CM2 whole-tumor DSC {wt2:.3} (diff {:.3})", cm2.seg_digests.len(), (wt - wt2).abs()),
    );

    let (_, s3) = desk_run(RunKind::UM1);
    let groups = [
        GroupName::Cortical,
        GroupName::Subcortical,
        GroupName::WholeBrain,
        GroupName::TumorAll,
    ];
    let cols: Vec<String> = groups
        .iter()
        .map(|g| {
            format!(
                "{} {:.3}",
                g.as_str(),
                s3.get(&format!("dsc_{}", g.as_str())).unwrap()
            )
        })
        .collect();
    let tumor = s3.get("dsc_tumor_all").unwrap();
    r.line(
        8,
        tumor >= 0.60,
        format!("UM1 final-5 DSC: {}", cols.join(", ")),
    );
}

/// Share of the rendered red mass over all axial slices that falls inside
/// the case's region.
fn red_mass_share(model: ModelKind, kind: TaxonomyKind) -> f64 {
    let cfg = PhantomConfig {
        seed: 9,
        ..PhantomConfig::default_for(model)
    };
    let (_, gt) = generate_phantom(&cfg).unwrap();
    let case = build_case(kind, &gt, &cfg.schema).unwrap();
    let palette = Palette::anatomy(&cfg.schema).unwrap();
    let (mut inside, mut total) = (0.0, 0.0);
    for index in 0..Axis::Axial.extent(gt.dims()) {
        let spec = OverlaySpec {
            axis: Axis::Axial,
            index,
            overlay_mask: None,
        };
        let img = render_slice(&case.pred, &case.unc, &spec, &palette).unwrap();
        let labels = extract_slice(&case.pred, Axis::Axial, index).unwrap();
        let region = extract_slice(&case.region, Axis::Axial, index).unwrap();
        for v in 0..img.height {
            for u in 0..img.width {
                let w = recover_u(palette.color(labels.get(u, v)), img.pixel(u, v)).unwrap_or(0.0);
                total += w;
                if region.get(u, v) == 1 {
                    inside += w;
                }
            }
        }
    }
    inside / total
}

fn criterion_9(r: &mut Report) {
    let mut parts = Vec::new();
    let mut ok = true;
    for model in [ModelKind::Cm, ModelKind::Um] {
        for kind in TaxonomyKind::ALL {
            let share = red_mass_share(model, kind);
            ok &= share >= 0.60;
            parts.push(format!("{model:?}/{} {:.1}%", kind.name(), 100.0 * share));
        }
    }
    r.line(
        9,
        ok,
        format!(
            "red mass in boundary band / false-positive shell / false-negative shell: {}",
            parts.join(", ")
        ),
    );
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_uncseg"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("synth.json"), r#"{"model":"cm","dims":{"nx":16,"ny":16,"nz":16},"tumor-radius-range":[2.0,4.0],"seed":10,"n-cases":6,"split":0.34}"#).unwrap();
    std::fs::write(
        d.join("train.json"),
        r#"{"run-kind":"CM1","epochs":2,"train-batches-per-epoch":2,"val-batches-per-epoch":1,"patch-dims":{"nx":16,"ny":16,"nz":16},"depth":2,"base-width":4,"seed":10}"#,
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    for run in ["a", "b"] {
        let base = d.join(run);
        cli(&[
            "synth",
            "--config",
            &s(&d.join("synth.json")),
            "--out",
            &s(&base.join("data")),
        ]);
        cli(&[
            "train",
            "--config",
            &s(&d.join("train.json")),
            "--data",
            &s(&base.join("data")),
            "--out",
            &s(&base.join("run")),
        ]);
        cli(&[
            "eval",
            "--checkpoint",
            &s(&base.join("run/checkpoints/epoch_001")),
            "--data",
            &s(&base.join("data")),
            "--out",
            &s(&base.join("eval")),
            "--split",
            "all",
        ]);
        cli(&[
            "render",
            "--case",
            &s(&base.join("eval/case_0000")),
            "--out",
            &s(&base.join("render")),
            "--axes",
            "axial,coronal,sagittal",
        ]);
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for sub in ["data", "run", "eval", "render"] {
        let (a, b) = (tree(&d.join("a").join(sub)), tree(&d.join("b").join(sub)));
        let same = !a.is_empty() && a == b;
        ok &= same;
        parts.push(format!(
            "{sub} {} files {}",
            a.len(),
            if same { "identical" } else { "differ" }
        ));
    }
    r.line(10, ok, parts.join(", "));
}

#[test]
fn acceptance() {
    let mut r = Report { failed: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    criteria_6_7_8(&mut r);
    criterion_9(&mut r);
    criterion_10(&mut r);
    assert!(r.failed.is_empty(), "failed criteria: {:?}", r.failed);
}
