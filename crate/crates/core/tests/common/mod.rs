//! Finite-difference oracles and small fixtures shared by integration tests.
//! The finite-difference side never touches the library's backward pass.

#![allow(dead_code)]

use uncseg::losses::{kernels, LossWeights};
use uncseg::net::{self, DetachedFeatures, Feature, NetConfig, Parameters, Partition};
use uncseg::voxvol::Dims;

pub const FD_STEP: f64 = 1e-3;

/// Deterministic values in [-1, 1) from a 64-bit LCG.
pub fn lcg_values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            2.0 * ((s >> 11) as f64 / (1u64 << 53) as f64) - 1.0
        })
        .collect()
}

pub fn tiny_config(classes: usize, seed: u64) -> NetConfig {
    NetConfig {
        in_channels: 1,
        num_classes: classes,
        depth: 2,
        base_width: 2,
        seed,
    }
}

pub fn random_input(dims: Dims, channels: usize, seed: u64) -> Feature<f64> {
    Feature {
        channels,
        dims,
        data: lcg_values(channels * dims.voxels(), seed),
    }
}

/// Class index per voxel from a few random blobs so every class occurs.
pub fn random_targets(dims: Dims, classes: usize, seed: u64) -> Vec<usize> {
    let r = lcg_values(dims.voxels(), seed);
    r.iter()
        .map(|v| (((v + 1.0) / 2.0) * classes as f64) as usize % classes)
        .collect()
}

pub fn dce_objective(params: &Parameters<f64>, x: &Feature<f64>, targets: &[usize]) -> f64 {
    let (out, _) = net::forward(params, x).unwrap();
    kernels::dice_ce(&out.seg_logits.data, params.config().num_classes, targets).value
}

/// Uncertainty part of the objective as the training step evaluates it:
/// features and target are frozen inputs, only the parameters vary.
pub fn unc_objective(
    params: &Parameters<f64>,
    features: &DetachedFeatures<f64>,
    target: &[f64],
    mask: &[f64],
    w: &LossWeights,
) -> f64 {
    let (_, prob) = net::unc_head_forward(params, features);
    kernels::uncertainty_terms(&prob.data, target, mask, w).value
}

/// Fourth-order central difference `(8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h`,
/// grouped so a parameter with no influence gives exactly zero.
pub fn central_difference4(
    params: &Parameters<f64>,
    tensor: usize,
    index: usize,
    h: f64,
    f: &dyn Fn(&Parameters<f64>) -> f64,
) -> f64 {
    let mut p = params.clone();
    let base = p.tensors()[tensor].data[index];
    let mut at = |d: f64| {
        p.tensors_mut()[tensor].data[index] = base + d;
        f(&p)
    };
    let near = at(h) - at(-h);
    let far = at(2.0 * h) - at(-2.0 * h);
    (8.0 * near - far) / (12.0 * h)
}

/// Central difference of `f` w.r.t. one scalar parameter.
pub fn central_difference(
    params: &Parameters<f64>,
    tensor: usize,
    index: usize,
    h: f64,
    f: &dyn Fn(&Parameters<f64>) -> f64,
) -> f64 {
    let mut p = params.clone();
    let base = p.tensors()[tensor].data[index];
    p.tensors_mut()[tensor].data[index] = base + h;
    let up = f(&p);
    p.tensors_mut()[tensor].data[index] = base - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub fn partition_of(params: &Parameters<f64>, tensor: usize) -> Partition {
    params.tensors()[tensor].partition
}

/// ReLU on/off pattern of every activated layer, in evaluation order.
pub type ActivationPattern = Vec<Vec<bool>>;

struct NaiveMap {
    c: usize,
    n: [usize; 3],
    v: Vec<f64>,
}

impl NaiveMap {
    fn at(&self, c: usize, x: isize, y: isize, z: isize) -> f64 {
        let [nx, ny, nz] = self.n;
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            return 0.0;
        }
        self.v[c * nx * ny * nz + x as usize + nx * (y as usize + ny * z as usize)]
    }
}

fn find<'a>(p: &'a Parameters<f64>, name: &str) -> &'a uncseg::net::ParamTensor<f64> {
    p.tensors()
        .iter()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("missing tensor {name}"))
}

/// Zero-padded cross-correlation written directly from the definition.
fn naive_conv(p: &Parameters<f64>, layer: &str, input: &NaiveMap, stride: usize) -> NaiveMap {
    let w = find(p, &format!("{layer}.weight"));
    let b = find(p, &format!("{layer}.bias"));
    let (cout, cin, k) = (w.shape[0], w.shape[1], w.shape[2]);
    assert_eq!(cin, input.c, "{layer}");
    let pad = (k / 2) as isize;
    let n = input.n.map(|d| d / stride);
    let mut v = Vec::with_capacity(cout * n[0] * n[1] * n[2]);
    for co in 0..cout {
        for z in 0..n[2] {
            for y in 0..n[1] {
                for x in 0..n[0] {
                    let mut acc = b.data[co];
                    for ci in 0..cin {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                    acc += w.data[wi]
                                        * input.at(
                                            ci,
                                            (x * stride) as isize + kx as isize - pad,
                                            (y * stride) as isize + ky as isize - pad,
                                            (z * stride) as isize + kz as isize - pad,
                                        );
                                }
                            }
                        }
                    }
                    v.push(acc);
                }
            }
        }
    }
    NaiveMap { c: cout, n, v }
}

struct Relu<'a> {
    frozen: Option<&'a ActivationPattern>,
    seen: ActivationPattern,
}

impl Relu<'_> {
    fn apply(&mut self, mut m: NaiveMap) -> NaiveMap {
        let layer = self.seen.len();
        let on: Vec<bool> = match self.frozen {
            Some(pattern) => pattern[layer].clone(),
            None => m.v.iter().map(|&v| v > 0.0).collect(),
        };
        for (v, &keep) in m.v.iter_mut().zip(&on) {
            if !keep {
                *v = 0.0;
            }
        }
        self.seen.push(on);
        m
    }
}

/// Independent reimplementation of the encoder-decoder forward pass.
/// Returns (seg logits, trunk features, activation pattern). With `frozen`
/// set, every ReLU uses the given on/off pattern instead of the sign of its
/// input, which evaluates the linear branch the network is on at that point.
pub fn oracle_forward(
    p: &Parameters<f64>,
    x: &Feature<f64>,
    frozen: Option<&ActivationPattern>,
) -> (Vec<f64>, Vec<f64>, ActivationPattern) {
    let depth = p.config().depth;
    let mut relu = Relu {
        frozen,
        seen: Vec::new(),
    };
    let mut cur = NaiveMap {
        c: x.channels,
        n: x.dims.as_array(),
        v: x.data.clone(),
    };
    let mut skips = Vec::new();
    for level in 0..depth {
        if level > 0 {
            cur = relu.apply(naive_conv(p, &format!("down{level}"), &cur, 2));
        }
        cur = relu.apply(naive_conv(p, &format!("enc{level}a"), &cur, 1));
        cur = relu.apply(naive_conv(p, &format!("enc{level}b"), &cur, 1));
        skips.push(NaiveMap {
            c: cur.c,
            n: cur.n,
            v: cur.v.clone(),
        });
    }
    for level in (0..depth - 1).rev() {
        let n = cur.n.map(|d| d * 2);
        let mut up = Vec::with_capacity(cur.c * n[0] * n[1] * n[2]);
        for c in 0..cur.c {
            for z in 0..n[2] {
                for y in 0..n[1] {
                    for xx in 0..n[0] {
                        up.push(cur.at(c, (xx / 2) as isize, (y / 2) as isize, (z / 2) as isize));
                    }
                }
            }
        }
        let up = NaiveMap { c: cur.c, n, v: up };
        let mut cat = relu.apply(naive_conv(p, &format!("up{level}"), &up, 1));
        cat.c += skips[level].c;
        cat.v.extend_from_slice(&skips[level].v);
        cur = relu.apply(naive_conv(p, &format!("dec{level}a"), &cat, 1));
        cur = relu.apply(naive_conv(p, &format!("dec{level}b"), &cur, 1));
    }
    let seg = naive_conv(p, "seg_head", &cur, 1);
    (seg.v, cur.v, relu.seen)
}

/// Dice + cross-entropy on the oracle network's branch through `pattern`.
pub fn dce_objective_on_branch(
    params: &Parameters<f64>,
    x: &Feature<f64>,
    targets: &[usize],
    pattern: &ActivationPattern,
) -> f64 {
    let (seg, _, _) = oracle_forward(params, x, Some(pattern));
    kernels::dice_ce(&seg, params.config().num_classes, targets).value
}

pub const CHECK_CLASSES: usize = 4;

/// Tiny network, 8³ single-channel input, random class map, and a random
/// uncertainty head (the library starts it at zero).
pub struct GradFixture {
    pub params: Parameters<f64>,
    pub x: Feature<f64>,
    pub targets: Vec<usize>,
    pub mask: Vec<f64>,
}

pub fn grad_fixture(seed: u64) -> GradFixture {
    let mut params = Parameters::<f64>::init(tiny_config(CHECK_CLASSES, seed)).unwrap();
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        if t.partition == Partition::UncHead {
            let n = t.data.len();
            t.data = lcg_values(n, seed ^ (0xC0FFEE + i as u64))
                .iter()
                .map(|v| 0.8 * v)
                .collect();
        }
    }
    let dims = Dims::cube(8).unwrap();
    let targets = random_targets(dims, CHECK_CLASSES, seed ^ 0x5151);
    let mask = targets.iter().map(|&c| (c != 0) as u8 as f64).collect();
    GradFixture {
        x: random_input(dims, 1, seed ^ 0xABCD),
        params,
        targets,
        mask,
    }
}

/// Smoothed tumor error map between the network's argmax and `targets`,
/// computed from scratch (XOR of non-background, 27-voxel zero-padded mean).
pub fn oracle_target(seg_logits: &[f64], targets: &[usize], dims: Dims) -> Vec<f64> {
    let pred = kernels::argmax(seg_logits, CHECK_CLASSES);
    let err: Vec<f64> = pred
        .iter()
        .zip(targets)
        .map(|(&p, &t)| ((p != 0) != (t != 0)) as u8 as f64)
        .collect();
    let [nx, ny, nz] = dims.as_array().map(|v| v as isize);
    let mut out = vec![0.0; err.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut s = 0.0;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (a, b, c) = (x + dx, y + dy, z + dz);
                            if (0..nx).contains(&a) && (0..ny).contains(&b) && (0..nz).contains(&c)
                            {
                                s += err[(a + nx * (b + ny * c)) as usize];
                            }
                        }
                    }
                }
                out[(x + nx * (y + ny * z)) as usize] = s / 27.0;
            }
        }
    }
    out
}

/// Largest |centered difference| of the uncertainty terms over every trunk
/// and seg_head scalar. Features and target are the detached values of the
/// base-point forward pass, as in a training step.
pub fn isolation_max_fd(fx: &GradFixture, h: f64) -> (f64, usize) {
    let w = LossWeights::default();
    let (out, state) = net::forward(&fx.params, &fx.x).unwrap();
    let snapshot = state.detached_features();
    let target = oracle_target(&out.seg_logits.data, &fx.targets, fx.x.dims);
    let objective = |p: &Parameters<f64>| unc_objective(p, &snapshot, &target, &fx.mask, &w);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, t) in fx.params.tensors().iter().enumerate() {
        if t.partition == Partition::UncHead {
            continue;
        }
        for j in 0..t.data.len() {
            worst = worst.max(central_difference(&fx.params, ti, j, h, &objective).abs());
            checked += 1;
        }
    }
    (worst, checked)
}

/// Same sweep without the stop-gradient: features recomputed from the
/// perturbed parameters. Shows what the detachment removes.
pub fn undetached_max_fd(fx: &GradFixture, h: f64) -> f64 {
    let w = LossWeights::default();
    let (out, _) = net::forward(&fx.params, &fx.x).unwrap();
    let target = oracle_target(&out.seg_logits.data, &fx.targets, fx.x.dims);
    let objective = |p: &Parameters<f64>| {
        let (_, state) = net::forward(p, &fx.x).unwrap();
        unc_objective(p, &state.detached_features(), &target, &fx.mask, &w)
    };
    let mut worst = 0.0f64;
    for (ti, t) in fx.params.tensors().iter().enumerate() {
        if t.partition == Partition::Trunk {
            for j in 0..t.data.len() {
                worst = worst.max(central_difference(&fx.params, ti, j, h, &objective).abs());
            }
        }
    }
    worst
}

/// Library gradients of one forward pass for the given head gradients.
pub fn library_grads(
    fx: &GradFixture,
    seg: Option<&[f64]>,
    unc: Option<&[f64]>,
) -> net::Gradients<f64> {
    let (_, state) = net::forward(&fx.params, &fx.x).unwrap();
    let mut g = net::Gradients::zeros(&fx.params);
    let head = net::HeadGrads {
        seg_logits: seg,
        unc_logit: unc,
    };
    net::backward(&fx.params, &state, &head, &mut g).unwrap();
    g
}

/// Worst per-parameter relative errors of the Dice+CE gradient.
pub struct DceCheck {
    /// Fourth-order central differences of the oracle network on the frozen
    /// activation branch.
    pub branch: f64,
    /// Two-point central differences on the same branch.
    pub branch_two_point: f64,
    /// Two-point central differences of the library forward, ReLU kinks
    /// included.
    pub raw_two_point: f64,
}

pub fn dce_param_check(fx: &GradFixture, h: f64) -> DceCheck {
    let (out, _) = net::forward(&fx.params, &fx.x).unwrap();
    let (oracle_seg, _, pattern) = oracle_forward(&fx.params, &fx.x, None);
    let drift = out
        .seg_logits
        .data
        .iter()
        .zip(&oracle_seg)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(
        drift < 1e-12,
        "oracle forward disagrees with library by {drift}"
    );
    let seg_grad = kernels::dice_ce(&out.seg_logits.data, CHECK_CLASSES, &fx.targets).grad;
    let g = library_grads(fx, Some(&seg_grad), None);
    let branch = |p: &Parameters<f64>| dce_objective_on_branch(p, &fx.x, &fx.targets, &pattern);
    let raw = |p: &Parameters<f64>| dce_objective(p, &fx.x, &fx.targets);
    let mut c = DceCheck {
        branch: 0.0,
        branch_two_point: 0.0,
        raw_two_point: 0.0,
    };
    for (ti, t) in fx.params.tensors().iter().enumerate() {
        if t.partition == Partition::UncHead {
            assert!(g.tensor(ti).iter().all(|&v| v == 0.0));
            continue;
        }
        for j in 0..t.data.len() {
            let a = g.tensor(ti)[j];
            c.branch = c.branch.max(relative_error(
                a,
                central_difference4(&fx.params, ti, j, h, &branch),
            ));
            c.branch_two_point = c.branch_two_point.max(relative_error(
                a,
                central_difference(&fx.params, ti, j, h, &branch),
            ));
            c.raw_two_point = c.raw_two_point.max(relative_error(
                a,
                central_difference(&fx.params, ti, j, h, &raw),
            ));
        }
    }
    c
}

/// Worst relative error of the uncertainty-term gradient w.r.t. the
/// uncertainty head parameters (through the logistic).
pub fn unc_param_check(fx: &GradFixture, h: f64) -> f64 {
    let w = LossWeights::default();
    let (out, state) = net::forward(&fx.params, &fx.x).unwrap();
    let features = state.detached_features();
    let target = oracle_target(&out.seg_logits.data, &fx.targets, fx.x.dims);
    let u = &out.unc_prob.data;
    let terms = kernels::uncertainty_terms(u, &target, &fx.mask, &w);
    let d_logit: Vec<f64> = terms
        .grad_u
        .iter()
        .zip(u)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    let g = library_grads(fx, None, Some(&d_logit));
    let objective = |p: &Parameters<f64>| unc_objective(p, &features, &target, &fx.mask, &w);
    let mut worst = 0.0f64;
    for (ti, t) in fx.params.tensors().iter().enumerate() {
        if t.partition != Partition::UncHead {
            assert!(
                g.tensor(ti).iter().all(|&v| v == 0.0),
                "{} received uncertainty gradient",
                t.name
            );
            continue;
        }
        for j in 0..t.data.len() {
            worst = worst.max(relative_error(
                g.tensor(ti)[j],
                central_difference4(&fx.params, ti, j, h, &objective),
            ));
        }
    }
    worst
}

/// Fourth-order central difference of `f` w.r.t. `v[i]`.
pub fn fd_at(v: &[f64], i: usize, h: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut p = v.to_vec();
    let mut at = |d: f64| {
        p[i] = v[i] + d;
        f(&p)
    };
    let near = at(h) - at(-h);
    let far = at(2.0 * h) - at(-2.0 * h);
    (8.0 * near - far) / (12.0 * h)
}

/// Worst relative errors of the gradients w.r.t. the network outputs:
/// `(dice_ce w.r.t. logits, rmsd w.r.t. U, corr w.r.t. U, combined
/// uncertainty terms w.r.t. U)`.
pub fn output_grad_check(seed: u64, h: f64) -> [f64; 4] {
    let n = 200;
    let classes = CHECK_CLASSES;
    let logits: Vec<f64> = lcg_values(classes * n, seed)
        .iter()
        .map(|v| 3.0 * v)
        .collect();
    let targets: Vec<usize> = lcg_values(n, seed ^ 1)
        .iter()
        .map(|v| ((v + 1.0) / 2.0 * classes as f64) as usize % classes)
        .collect();
    let u: Vec<f64> = lcg_values(n, seed ^ 2)
        .iter()
        .map(|v| 0.5 + 0.45 * v)
        .collect();
    let e: Vec<f64> = lcg_values(n, seed ^ 3)
        .iter()
        .map(|v| 0.5 + 0.5 * v)
        .collect();
    let m: Vec<f64> = lcg_values(n, seed ^ 4)
        .iter()
        .map(|v| (*v > -0.4) as u8 as f64)
        .collect();
    let w = LossWeights::default();
    let eps = w.epsilon;

    let mut worst = [0.0f64; 4];
    let seg = kernels::dice_ce(&logits, classes, &targets);
    for i in 0..logits.len() {
        let fd = fd_at(&logits, i, h, &|l| {
            kernels::dice_ce(l, classes, &targets).value
        });
        worst[0] = worst[0].max(relative_error(seg.grad[i], fd));
    }
    let r = kernels::rmsd(&u, &e, &m, eps);
    let c = kernels::corr(&u, &e, &m, eps);
    let t = kernels::uncertainty_terms(&u, &e, &m, &w);
    for i in 0..n {
        if m[i] == 0.0 {
            assert_eq!((r.grad[i], c.grad[i], t.grad_u[i]), (0.0, 0.0, 0.0));
            continue;
        }
        worst[1] = worst[1].max(relative_error(
            r.grad[i],
            fd_at(&u, i, h, &|v| kernels::rmsd(v, &e, &m, eps).value),
        ));
        worst[2] = worst[2].max(relative_error(
            c.grad[i],
            fd_at(&u, i, h, &|v| kernels::corr(v, &e, &m, eps).value),
        ));
        worst[3] = worst[3].max(relative_error(
            t.grad_u[i],
            fd_at(&u, i, h, &|v| {
                kernels::uncertainty_terms(v, &e, &m, &w).value
            }),
        ));
    }
    worst
}
