//! Per-iteration losses of the three training loops, with hand-written
//! gradients accumulated into [`ParamTensor`] buffers. Each takes the
//! quantization noise explicitly so that, for a fixed [`Quantizer`], the loss
//! is a deterministic function of the parameters.

use rand::Rng;

use crate::config::LearningRates;
use crate::diff::ParamTensor;
use crate::entropy::{FactorizedEntropyModel, RateGrad};
use crate::error::{Error, Result};
use crate::model::{GaussianPrimitive, Quat, Vec3};
use crate::motion::{apply_backward, apply_sample, predict_backward, predict_traced, Aabb, GridConfig, MotionMlps, MotionTrace};
use crate::render::{loss_color, render, render_backward, PrimitiveGrad};

use super::View;

/// Number of tensors [`primitive_tensors`] produces.
pub const PRIMITIVE_TENSORS: usize = 5;

/// The step as it will be written to the stream.
pub fn coded_step(q: f64) -> f64 {
    q as f32 as f64
}

/// Stand-in for rounding in one iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum Quantizer {
    /// `y = q·x + u` with the given `u ~ U(−½, ½)` per element.
    Noise(Vec<f64>),
    /// `y = ⌊q·x + ½⌋`, with the gradient passed straight through.
    Round,
}

impl Quantizer {
    pub fn noise<R: Rng>(n: usize, rng: &mut R) -> Self {
        Quantizer::Noise((0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
    }

    /// Noise for the first `iters − hard` iterations, rounding afterwards.
    pub fn for_iteration<R: Rng>(it: usize, iters: usize, hard: usize, n: usize, rng: &mut R) -> Self {
        if it + hard >= iters {
            Quantizer::Round
        } else {
            Quantizer::noise(n, rng)
        }
    }

    /// The scaled values `y`; `∂y/∂x = q` in both modes.
    pub fn apply(&self, x: &[f64], q: f64) -> Vec<f64> {
        match self {
            Quantizer::Noise(u) => {
                assert_eq!(u.len(), x.len(), "noise length");
                x.iter().zip(u).map(|(v, n)| q * v + n).collect()
            }
            Quantizer::Round => x.iter().map(|v| (q * v + 0.5).floor()).collect(),
        }
    }
}

/// Center, rotation, log-scale, opacity-logit and SH tensors for `prims`.
pub fn primitive_tensors(prims: &[GaussianPrimitive], sh_len: usize, lr: &LearningRates, extent: f64) -> Vec<ParamTensor> {
    let n = prims.len();
    let mut center = Vec::with_capacity(3 * n);
    let mut rotation = Vec::with_capacity(4 * n);
    let mut log_scale = Vec::with_capacity(3 * n);
    let mut opacity = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(sh_len * n);
    for g in prims {
        center.extend(g.center.iter());
        rotation.extend(g.rotation.to_array());
        log_scale.extend(g.log_scale.iter());
        opacity.push(g.opacity_logit);
        assert_eq!(g.sh.len(), sh_len, "SH length");
        sh.extend_from_slice(&g.sh);
    }
    vec![
        ParamTensor::new("center", center, vec![n, 3], lr.center * extent),
        ParamTensor::quaternions("rotation", rotation, lr.rotation),
        ParamTensor::new("log_scale", log_scale, vec![n, 3], lr.log_scale),
        ParamTensor::new("opacity", opacity, vec![n], lr.opacity),
        ParamTensor::new("sh", sh, vec![n, sh_len], lr.sh),
    ]
}

/// Primitives from the first [`PRIMITIVE_TENSORS`] tensors.
pub fn primitives_from(params: &[ParamTensor]) -> Vec<GaussianPrimitive> {
    let n = params[3].len();
    let sh_len = if n == 0 { 0 } else { params[4].len() / n };
    (0..n)
        .map(|i| {
            let c = &params[0].values[3 * i..3 * i + 3];
            let r = &params[1].values[4 * i..4 * i + 4];
            let s = &params[2].values[3 * i..3 * i + 3];
            GaussianPrimitive {
                center: Vec3::new(c[0], c[1], c[2]),
                rotation: Quat::new(r[0], r[1], r[2], r[3]),
                log_scale: Vec3::new(s[0], s[1], s[2]),
                opacity_logit: params[3].values[i],
                sh: params[4].values[sh_len * i..sh_len * (i + 1)].to_vec(),
            }
        })
        .collect()
}

fn accumulate_primitive_grads(params: &mut [ParamTensor], grads: &[PrimitiveGrad]) {
    for (i, g) in grads.iter().enumerate() {
        for k in 0..3 {
            params[0].grad[3 * i + k] += g.center[k];
            params[2].grad[3 * i + k] += g.log_scale[k];
        }
        for k in 0..4 {
            params[1].grad[4 * i + k] += g.rotation[k];
        }
        params[3].grad[i] += g.opacity_logit;
        let sh_len = g.sh.len();
        for (k, v) in g.sh.iter().enumerate() {
            params[4].grad[sh_len * i + k] += v;
        }
    }
}

/// `λ1 · bits(y) / M`. Adds `∂/∂x = q·∂/∂y` into `value_grad` and the model
/// parameter gradient into `model_grad`.
fn rate_term(
    model: &FactorizedEntropyModel,
    y: &[f64],
    channel_of: impl Fn(usize) -> usize,
    lambda1: f64,
    q: f64,
    value_grad: &mut [f64],
    model_grad: &mut [f64],
) -> (f64, f64) {
    if y.is_empty() {
        return (0.0, 0.0);
    }
    if lambda1 == 0.0 {
        return (0.0, model.rate_bits(y, channel_of, None));
    }
    let scale = lambda1 / y.len() as f64;
    let mut gy = vec![0.0; y.len()];
    let bits = model.rate_bits(
        y,
        channel_of,
        Some(RateGrad { scale, values: Some(&mut gy), params: Some(model_grad) }),
    );
    for (g, d) in value_grad.iter_mut().zip(&gy) {
        *g += q * d;
    }
    (scale * bits, bits)
}

/// One evaluated iteration.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub loss: f64,
    pub distortion: f64,
    /// Estimated bits of the rate-penalized tensor.
    pub bits: f64,
    /// Projected-center gradient of each primitive, when visible.
    pub mean2d: Vec<Option<[f64; 2]>>,
}

fn mean2d_of(grads: &[PrimitiveGrad]) -> Vec<Option<[f64; 2]>> {
    grads.iter().map(|g| g.visible.then_some(g.mean2d)).collect()
}

fn check_finite(e: &Evaluation, what: &str) -> Result<()> {
    if !e.loss.is_finite() {
        return Err(Error::Diverged(format!("{what} loss is {}", e.loss)));
    }
    Ok(())
}

/// Fixed inputs of the photometric and rate terms.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub background: [f64; 3],
}

/// Keyframe loss. `params` holds the primitive tensors followed by the SH
/// entropy model; element `i` of the SH tensor uses channel `i % sh_len`.
pub fn keyframe_objective(
    params: &mut [ParamTensor],
    view: &View,
    w: &LossWeights,
    q_sh: f64,
    quant: &Quantizer,
) -> Result<Evaluation> {
    let model = FactorizedEntropyModel { channels: params[5].len() / crate::entropy::PARAMS_PER_CHANNEL, params: params[5].values.clone() };
    let q = coded_step(q_sh);
    let mut prims = primitives_from(params);
    let sh_len = prims.first().map_or(0, |g| g.sh.len());
    let y = quant.apply(&params[4].values, q);
    for (i, g) in prims.iter_mut().enumerate() {
        for k in 0..sh_len {
            g.sh[k] = y[sh_len * i + k] / q;
        }
    }
    let rendered = render(&prims, &view.camera, w.background);
    let lv = loss_color(&rendered.image, &view.image, w.lambda2)?;
    let grads = render_backward(&prims, &view.camera, w.background, &lv.grad);
    accumulate_primitive_grads(params, &grads);
    let (sh_params, model_params) = params.split_at_mut(5);
    let (rate, bits) = rate_term(&model, &y, |i| i % sh_len, w.lambda1, q, &mut sh_params[4].grad, &mut model_params[0].grad);
    let e = Evaluation { loss: lv.value + rate, distortion: lv.value, bits, mean2d: mean2d_of(&grads) };
    check_finite(&e, "keyframe")?;
    Ok(e)
}

/// What stage 1 moves and how the grid is laid out.
#[derive(Clone, Debug)]
pub struct MotionContext<'a> {
    pub reference: &'a [GaussianPrimitive],
    pub grid: &'a GridConfig,
    pub bbox: &'a Aabb,
    /// Entropy-model channel of every grid value.
    pub channel_map: &'a [u16],
    pub hidden_width: usize,
    pub q_grid: f64,
}

/// Grid-value channels, precomputed once per configuration.
pub fn grid_channel_map(cfg: &GridConfig) -> Vec<u16> {
    let mut out = Vec::with_capacity(cfg.total_len());
    let mut base = 0;
    for l in 0..cfg.levels() {
        let ch = cfg.channels[l];
        for i in 0..cfg.level_len(l) {
            out.push((base + i % ch) as u16);
        }
        base += ch;
    }
    out
}

/// Stage-1 loss. `params` is `[grid, mlp, grid entropy model]`; the MLP
/// gradient is only computed when that tensor is learnable.
pub fn stage1_objective(
    params: &mut [ParamTensor],
    ctx: &MotionContext<'_>,
    view: &View,
    w: &LossWeights,
    quant: &Quantizer,
) -> Result<Evaluation> {
    let q = coded_step(ctx.q_grid);
    let mlps = MotionMlps::from_flat(ctx.grid.feature_width(), ctx.hidden_width, &params[1].values)?;
    let model = FactorizedEntropyModel { channels: ctx.grid.total_channels(), params: params[2].values.clone() };
    let y = quant.apply(&params[0].values, q);
    let used: Vec<f64> = y.iter().map(|v| v / q).collect();

    let mut traces = vec![MotionTrace::default(); ctx.reference.len()];
    let mut samples = Vec::with_capacity(ctx.reference.len());
    let mut moved = Vec::with_capacity(ctx.reference.len());
    for (g, trace) in ctx.reference.iter().zip(traces.iter_mut()) {
        let s = predict_traced(&used, ctx.grid, ctx.bbox, &mlps, &g.center, trace);
        moved.push(apply_sample(g, &s));
        samples.push(s);
    }
    let rendered = render(&moved, &view.camera, w.background);
    let lv = loss_color(&rendered.image, &view.image, w.lambda2)?;
    let grads = render_backward(&moved, &view.camera, w.background, &lv.grad);

    let train_mlp = params[1].learnable;
    let (grid_t, rest) = params.split_at_mut(1);
    let (mlp_t, model_t) = rest.split_at_mut(1);
    for (i, pg) in grads.iter().enumerate() {
        if !pg.visible {
            continue;
        }
        let (g_mu, g_q) = apply_backward(ctx.reference[i].rotation, &samples[i], &pg.center, pg.rotation_quat());
        let mlp_grad = if train_mlp { Some(&mut mlp_t[0].grad[..]) } else { None };
        predict_backward(&traces[i], ctx.grid, &mlps, &g_mu, &g_q, &mut grid_t[0].grad, mlp_grad);
    }
    let map = ctx.channel_map;
    let (rate, bits) = rate_term(&model, &y, |i| map[i] as usize, w.lambda1, q, &mut grid_t[0].grad, &mut model_t[0].grad);
    let e = Evaluation { loss: lv.value + rate, distortion: lv.value, bits, mean2d: mean2d_of(&grads) };
    check_finite(&e, "stage-1")?;
    Ok(e)
}

/// Stage-2 loss. `params` holds the compensated primitives' tensors followed
/// by their SH entropy model; `fixed` (the moved previous frame) is rendered
/// but never differentiated.
pub fn stage2_objective(
    params: &mut [ParamTensor],
    fixed: &[GaussianPrimitive],
    view: &View,
    w: &LossWeights,
    q_sh: f64,
    quant: &Quantizer,
) -> Result<Evaluation> {
    let model = FactorizedEntropyModel { channels: params[5].len() / crate::entropy::PARAMS_PER_CHANNEL, params: params[5].values.clone() };
    let q = coded_step(q_sh);
    let mut delta = primitives_from(params);
    let sh_len = delta.first().map_or(0, |g| g.sh.len());
    let y = quant.apply(&params[4].values, q);
    for (i, g) in delta.iter_mut().enumerate() {
        for k in 0..sh_len {
            g.sh[k] = y[sh_len * i + k] / q;
        }
    }
    let mut all = fixed.to_vec();
    all.extend(delta);
    let rendered = render(&all, &view.camera, w.background);
    let lv = loss_color(&rendered.image, &view.image, w.lambda2)?;
    let grads = render_backward(&all, &view.camera, w.background, &lv.grad);
    accumulate_primitive_grads(params, &grads[fixed.len()..]);
    let (prim_t, model_t) = params.split_at_mut(5);
    let (rate, bits) = rate_term(&model, &y, |i| i % sh_len.max(1), w.lambda1, q, &mut prim_t[4].grad, &mut model_t[0].grad);
    let e = Evaluation { loss: lv.value + rate, distortion: lv.value, bits, mean2d: mean2d_of(&grads) };
    check_finite(&e, "stage-2")?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_through_rounding() {
        let y = Quantizer::Round.apply(&[0.123, -0.016, 0.5], 100.0);
        assert_eq!(y, vec![12.0, -2.0, 50.0]);
        let y = Quantizer::Noise(vec![0.25, -0.5]).apply(&[0.1, 0.2], 10.0);
        assert_eq!(y, vec![1.25, 1.5]);
    }

    #[test]
    fn channel_map_matches_config() {
        let cfg = GridConfig { resolutions: vec![2, 3], channels: vec![3, 2] };
        let map = grid_channel_map(&cfg);
        assert_eq!(map.len(), cfg.total_len());
        for (i, &c) in map.iter().enumerate() {
            assert_eq!(c as usize, cfg.channel_of(i));
        }
    }

    #[test]
    fn tensors_round_trip() {
        let g = GaussianPrimitive {
            center: Vec3::new(1.0, 2.0, 3.0),
            rotation: Quat::new(0.5, 0.5, 0.5, 0.5),
            log_scale: Vec3::new(-1.0, -2.0, -3.0),
            opacity_logit: 0.7,
            sh: (0..12).map(|v| v as f64).collect(),
        };
        let t = primitive_tensors(&[g.clone(), g.clone()], 12, &LearningRates::default(), 2.0);
        assert_eq!(t[0].lr, 2.0 * LearningRates::default().center);
        assert_eq!(primitives_from(&t), vec![g.clone(), g]);
        assert!(primitives_from(&primitive_tensors(&[], 12, &LearningRates::default(), 1.0)).is_empty());
    }
}
