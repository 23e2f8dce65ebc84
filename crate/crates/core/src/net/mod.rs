//! Small 3D encoder-decoder with a segmentation head and an uncertainty head.
//!
//! Both heads are 1x1x1 convolutions reading the final decoder feature map.
//! The uncertainty head reads those features *detached*: its gradients stop
//! at its own weights, so uncertainty losses can never reach the trunk or the
//! segmentation head. In code this is structural: [`backward`] routes the
//! segmentation gradient through the trunk and the uncertainty gradient only
//! into the uncertainty head's parameters.

pub mod ops;
mod params;
mod tensor;

pub use ops::{sigmoid, ConvGeom};
pub use params::{Gradients, NetConfig, ParamTensor, Parameters, Partition};
pub use tensor::{Feature, Real};

use crate::error::{Error, Result};
use crate::voxvol::{Dims, VoxelGrid};

/// Network outputs for one input volume.
#[derive(Clone, Debug)]
pub struct NetOutput<T> {
    pub seg_logits: Feature<T>,
    pub unc_logit: Feature<T>,
    pub unc_prob: Feature<T>,
}

impl<T: Real> NetOutput<T> {
    /// `(seg_logits, unc_logit, unc_prob)` as `f32` grids.
    pub fn to_grids(&self) -> (VoxelGrid, VoxelGrid, VoxelGrid) {
        (
            self.seg_logits.to_grid(),
            self.unc_logit.to_grid(),
            self.unc_prob.to_grid(),
        )
    }
}

/// Final decoder features with gradient flow cut. Only [`forward`] makes one.
#[derive(Clone, Debug)]
pub struct DetachedFeatures<T>(Feature<T>);

impl<T: Real> DetachedFeatures<T> {
    pub fn feature(&self) -> &Feature<T> {
        &self.0
    }
}

enum Op {
    Conv {
        layer: usize,
        input: usize,
        output: usize,
    },
    Upsample {
        input: usize,
        output: usize,
    },
    Concat {
        a: usize,
        b: usize,
        output: usize,
    },
}

/// Everything [`backward`] needs from a forward pass.
pub struct ForwardState<T> {
    config: NetConfig,
    tensors: Vec<Feature<T>>,
    tape: Vec<Op>,
    features: usize,
}

impl<T: Real> ForwardState<T> {
    pub fn detached_features(&self) -> DetachedFeatures<T> {
        DetachedFeatures(self.tensors[self.features].clone())
    }

    pub fn input_dims(&self) -> Dims {
        self.tensors[0].dims
    }
}

/// Gradients of the loss w.r.t. the two head outputs.
pub struct HeadGrads<'a, T> {
    pub seg_logits: Option<&'a [T]>,
    pub unc_logit: Option<&'a [T]>,
}

pub fn check_input<T: Real>(params: &Parameters<T>, image: &Feature<T>) -> Result<()> {
    let cfg = params.config();
    if image.channels != cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            image.channels, cfg.in_channels
        )));
    }
    let f = cfg.size_factor();
    for axis in 0..3 {
        let n = image.dims.extent(axis);
        if !n.is_multiple_of(f) {
            return Err(Error::Shape(format!(
                "input dims {} not divisible by {f} (depth {})",
                image.dims, cfg.depth
            )));
        }
    }
    Ok(())
}

pub fn forward<T: Real>(
    params: &Parameters<T>,
    image: &Feature<T>,
) -> Result<(NetOutput<T>, ForwardState<T>)> {
    check_input(params, image)?;
    let cfg = *params.config();
    let mut tensors = vec![image.clone()];
    let mut tape = Vec::new();

    let conv = |tensors: &mut Vec<Feature<T>>, tape: &mut Vec<Op>, layer: usize, input: usize| {
        let l = params.layer(layer);
        let mut out = ops::conv_forward(
            &l.geom,
            &tensors[input],
            params.data(l.weight),
            params.data(l.bias),
        );
        if l.relu {
            ops::relu_inplace(&mut out);
        }
        tensors.push(out);
        let output = tensors.len() - 1;
        tape.push(Op::Conv {
            layer,
            input,
            output,
        });
        output
    };

    let layers = params.layout();
    let mut cur = 0;
    let mut skips = Vec::with_capacity(cfg.depth);
    for level in 0..cfg.depth {
        if level > 0 {
            cur = conv(&mut tensors, &mut tape, layers.down[level - 1], cur);
        }
        cur = conv(&mut tensors, &mut tape, layers.enc[level][0], cur);
        cur = conv(&mut tensors, &mut tape, layers.enc[level][1], cur);
        skips.push(cur);
    }
    for level in (0..cfg.depth.saturating_sub(1)).rev() {
        let up = ops::upsample2(&tensors[cur]);
        tensors.push(up);
        let up_id = tensors.len() - 1;
        tape.push(Op::Upsample {
            input: cur,
            output: up_id,
        });
        let c = conv(&mut tensors, &mut tape, layers.up[level], up_id);
        let cat = ops::concat(&tensors[c], &tensors[skips[level]]);
        tensors.push(cat);
        let cat_id = tensors.len() - 1;
        tape.push(Op::Concat {
            a: c,
            b: skips[level],
            output: cat_id,
        });
        cur = conv(&mut tensors, &mut tape, layers.dec[level][0], cat_id);
        cur = conv(&mut tensors, &mut tape, layers.dec[level][1], cur);
    }

    let features = cur;
    let seg = params.layer(layers.seg_head);
    let seg_logits = ops::conv_forward(
        &seg.geom,
        &tensors[features],
        params.data(seg.weight),
        params.data(seg.bias),
    );
    let detached = DetachedFeatures(tensors[features].clone());
    let (unc_logit, unc_prob) = unc_head_forward(params, &detached);
    Ok((
        NetOutput {
            seg_logits,
            unc_logit,
            unc_prob,
        },
        ForwardState {
            config: cfg,
            tensors,
            tape,
            features,
        },
    ))
}

/// The uncertainty head alone: `(logit, logistic(logit))`.
pub fn unc_head_forward<T: Real>(
    params: &Parameters<T>,
    features: &DetachedFeatures<T>,
) -> (Feature<T>, Feature<T>) {
    let l = params.layer(params.layout().unc_head);
    let logit = ops::conv_forward(
        &l.geom,
        &features.0,
        params.data(l.weight),
        params.data(l.bias),
    );
    let prob = Feature {
        channels: 1,
        dims: logit.dims,
        data: logit.data.iter().map(|&v| ops::sigmoid(v)).collect(),
    };
    (logit, prob)
}

/// Gradients for the uncertainty head's parameters only.
pub fn unc_head_backward<T: Real>(
    params: &Parameters<T>,
    features: &DetachedFeatures<T>,
    grad_logit: &[T],
    grads: &mut Gradients<T>,
) -> Result<()> {
    let l = params.layer(params.layout().unc_head);
    if grad_logit.len() != features.0.dims.voxels() {
        return Err(Error::Shape(format!(
            "uncertainty gradient has {} values, expected {}",
            grad_logit.len(),
            features.0.dims.voxels()
        )));
    }
    let g = ops::conv_backward(
        &l.geom,
        &features.0,
        params.data(l.weight),
        grad_logit,
        false,
    );
    grads.accumulate(l.weight, &g.weight);
    grads.accumulate(l.bias, &g.bias);
    Ok(())
}

/// Accumulates parameter gradients for one forward pass into `grads`.
///
/// The segmentation gradient flows through the segmentation head and the
/// whole trunk; the uncertainty gradient stops at the uncertainty head.
pub fn backward<T: Real>(
    params: &Parameters<T>,
    state: &ForwardState<T>,
    head: &HeadGrads<'_, T>,
    grads: &mut Gradients<T>,
) -> Result<()> {
    if state.config != *params.config() || state.tensors.is_empty() {
        return Err(Error::Usage(
            "backward called without a matching forward pass".into(),
        ));
    }
    if grads.len() != params.len() {
        return Err(Error::Usage(
            "gradient buffer does not match parameters".into(),
        ));
    }
    let layers = params.layout();
    let n = state.tensors[state.features].dims.voxels();

    if let Some(d_unc) = head.unc_logit {
        unc_head_backward(params, &state.detached_features(), d_unc, grads)?;
    }

    let Some(d_seg) = head.seg_logits else {
        return Ok(());
    };
    let classes = params.config().num_classes;
    if d_seg.len() != classes * n {
        return Err(Error::Shape(format!(
            "segmentation gradient has {} values, expected {}",
            d_seg.len(),
            classes * n
        )));
    }
    let seg = params.layer(layers.seg_head);
    let g = ops::conv_backward(
        &seg.geom,
        &state.tensors[state.features],
        params.data(seg.weight),
        d_seg,
        true,
    );
    grads.accumulate(seg.weight, &g.weight);
    grads.accumulate(seg.bias, &g.bias);

    let mut tgrads: Vec<Option<Vec<T>>> = vec![None; state.tensors.len()];
    tgrads[state.features] = g.input;

    let add = |slot: &mut Option<Vec<T>>, g: &[T]| match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    };

    for op in state.tape.iter().rev() {
        match *op {
            Op::Conv {
                layer,
                input,
                output,
            } => {
                let Some(mut go) = tgrads[output].take() else {
                    continue;
                };
                let l = params.layer(layer);
                if l.relu {
                    ops::relu_backward(&state.tensors[output], &mut go);
                }
                let g = ops::conv_backward(
                    &l.geom,
                    &state.tensors[input],
                    params.data(l.weight),
                    &go,
                    input != 0,
                );
                grads.accumulate(l.weight, &g.weight);
                grads.accumulate(l.bias, &g.bias);
                if let Some(gi) = g.input {
                    add(&mut tgrads[input], &gi);
                }
            }
            Op::Upsample { input, output } => {
                let Some(go) = tgrads[output].take() else {
                    continue;
                };
                let src = &state.tensors[input];
                let gi = ops::upsample2_backward(&go, src.channels, src.dims);
                add(&mut tgrads[input], &gi);
            }
            Op::Concat { a, b, output } => {
                let Some(go) = tgrads[output].take() else {
                    continue;
                };
                let split = state.tensors[a].data.len();
                add(&mut tgrads[a], &go[..split]);
                add(&mut tgrads[b], &go[split..]);
            }
        }
    }
    Ok(())
}
