//! The keyframe loop and the two per-frame stages.

use log::debug;
use rand_chacha::ChaCha8Rng;

use crate::compensation::{CompensatedSet, GradientStats};
use crate::config::{LearningRates, TrainConfig};
use crate::diff::{Adam, ParamTensor};
use crate::entropy::{FactorizedEntropyModel, PARAMS_PER_CHANNEL};
use crate::error::{Error, Result};
use crate::model::GaussianPrimitive;
use crate::motion::{Aabb, MotionMlps};

use super::objective::{
    grid_channel_map, keyframe_objective, primitive_tensors, primitives_from, stage1_objective, stage2_objective, LossWeights,
    MotionContext, Quantizer,
};
use super::{stage_rng, View, STAGE_KEYFRAME, STAGE_MOTION, STAGE_COMPENSATION};

fn weights(cfg: &TrainConfig) -> LossWeights {
    LossWeights { lambda1: cfg.lambda1, lambda2: cfg.lambda2, background: cfg.background }
}

fn entropy_tensor(name: &str, model: &FactorizedEntropyModel, lr: f64) -> ParamTensor {
    let n = model.params.len();
    ParamTensor::new(name, model.params.clone(), vec![n / PARAMS_PER_CHANNEL, PARAMS_PER_CHANNEL], lr)
}

fn require_views(views: &[View]) -> Result<()> {
    if views.len() < 2 {
        return Err(Error::invalid(format!("training needs at least 2 views, got {}", views.len())));
    }
    Ok(())
}

/// Adds the seed and configuration to a divergence report.
fn with_dump(e: Error, cfg: &TrainConfig, frame: u32) -> Error {
    match e {
        Error::Diverged(msg) => {
            let dump = serde_json::to_string(cfg).unwrap_or_default();
            Error::Diverged(format!("{msg} (frame {frame}, seed {}, config {dump})", cfg.seed))
        }
        other => other,
    }
}

/// Loss at the first and last iteration of a loop.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub first: f64,
    pub last: f64,
}

fn run<F>(iters: usize, final_ratio: f64, params: &mut [ParamTensor], mut step: F) -> Result<LossTrace>
where
    F: FnMut(usize, &mut [ParamTensor]) -> Result<f64>,
{
    let mut adam = Adam::new();
    let mut trace = LossTrace::default();
    let base: Vec<f64> = params.iter().map(|p| p.lr).collect();
    for it in 0..iters {
        let decay = final_ratio.powf(it as f64 / (iters.max(2) - 1) as f64);
        for (p, b) in params.iter_mut().zip(&base) {
            p.lr = b * decay;
        }
        crate::diff::zero_grads(params);
        let loss = step(it, params)?;
        if it == 0 {
            trace.first = loss;
        }
        trace.last = loss;
        adam.step(params)?;
    }
    Ok(trace)
}

/// Trained keyframe primitives (before quantization).
#[derive(Clone, Debug)]
pub struct KeyframeTraining {
    pub primitives: Vec<GaussianPrimitive>,
    pub loss: LossTrace,
}

/// Optimizes every attribute of `init` against the views, with the SH
/// coefficients quantization-simulated and rate-penalized.
pub fn train_keyframe(
    init: &[GaussianPrimitive],
    views: &[View],
    cfg: &TrainConfig,
    sh_model: &mut FactorizedEntropyModel,
) -> Result<KeyframeTraining> {
    require_views(views)?;
    cfg.validate()?;
    if init.is_empty() {
        return Err(Error::invalid("keyframe needs at least one primitive"));
    }
    let sh_len = crate::model::num_coeffs(cfg.sh_degree);
    let extent = Aabb::from_points(init.iter().map(|g| &g.center), 1.0)?.extent();
    let mut params = primitive_tensors(init, sh_len, &cfg.lr, extent);
    params.push(entropy_tensor("sh_entropy", sh_model, cfg.lr.entropy));
    let w = weights(cfg);
    let mut rng = stage_rng(cfg.seed, 1, STAGE_KEYFRAME);
    let n_sh = params[4].len();
    let loss = run(cfg.keyframe_iters, cfg.lr.final_ratio, &mut params, |it, p| {
        let quant = Quantizer::for_iteration(it, cfg.keyframe_iters, cfg.hard_quant_iters, n_sh, &mut rng);
        let e = keyframe_objective(p, &views[it % views.len()], &w, cfg.q_sh, &quant).map_err(|e| with_dump(e, cfg, 1))?;
        if it % 500 == 0 {
            debug!("keyframe it {it}: loss {:.6} distortion {:.6} bits {:.1}", e.loss, e.distortion, e.bits);
        }
        Ok(e.loss)
    })
    .map_err(|e| with_dump(e, cfg, 1))?;
    sh_model.params = params[5].values.clone();
    Ok(KeyframeTraining { primitives: primitives_from(&params), loss })
}

/// Stage-1 output: grid values and MLPs before quantization.
#[derive(Clone, Debug)]
pub struct MotionTraining {
    pub grid_values: Vec<f64>,
    pub mlps: MotionMlps,
    pub stats: GradientStats,
    pub loss: LossTrace,
}

/// Fits the motion grid (and, when `train_mlps`, the shared MLPs) that
/// moves `reference` onto the current frame's views. The grid starts at zero.
pub fn train_stage1(
    reference: &[GaussianPrimitive],
    bbox: &Aabb,
    mlps: &MotionMlps,
    train_mlps: bool,
    views: &[View],
    cfg: &TrainConfig,
    grid_model: &mut FactorizedEntropyModel,
    frame: u32,
) -> Result<MotionTraining> {
    require_views(views)?;
    mlps.check_grid(&cfg.grid)?;
    let n_grid = cfg.grid.total_len();
    let mut mlp_t = ParamTensor::new("mlp", mlps.to_flat(), vec![mlps.to_flat().len()], cfg.lr.mlp);
    if !train_mlps {
        mlp_t = mlp_t.frozen();
    }
    let mut params = vec![
        ParamTensor::new("grid", vec![0.0; n_grid], vec![n_grid], cfg.lr.grid),
        mlp_t,
        entropy_tensor("grid_entropy", grid_model, cfg.lr.entropy),
    ];
    let channel_map = grid_channel_map(&cfg.grid);
    let ctx = MotionContext {
        reference,
        grid: &cfg.grid,
        bbox,
        channel_map: &channel_map,
        hidden_width: mlps.hidden_width(),
        q_grid: cfg.q_grid,
    };
    let w = weights(cfg);
    let mut rng: ChaCha8Rng = stage_rng(cfg.seed, frame, STAGE_MOTION);
    let mut stats = GradientStats::new(reference.len());
    let loss = run(cfg.stage1_iters, cfg.lr.final_ratio, &mut params, |it, p| {
        let quant = Quantizer::for_iteration(it, cfg.stage1_iters, cfg.hard_quant_iters, n_grid, &mut rng);
        let e = stage1_objective(p, &ctx, &views[it % views.len()], &w, &quant)?;
        for (i, m) in e.mean2d.iter().enumerate() {
            if let Some(g) = m {
                stats.record(i, *g);
            }
        }
        if it % 100 == 0 {
            debug!("frame {frame} stage 1 it {it}: loss {:.6} bits {:.1}", e.loss, e.bits);
        }
        Ok(e.loss)
    })
    .map_err(|e| with_dump(e, cfg, frame))?;
    grid_model.params = params[2].values.clone();
    let mlps = MotionMlps::from_flat(mlps.feature_width(), mlps.hidden_width(), &params[1].values)?;
    Ok(MotionTraining { grid_values: std::mem::take(&mut params[0].values), mlps, stats, loss })
}

/// Optimizes the compensated primitives over the frozen moved frame, then
/// drops the nearly transparent ones.
pub fn train_stage2(
    fixed: &[GaussianPrimitive],
    clones: CompensatedSet,
    views: &[View],
    cfg: &TrainConfig,
    sh_model: &mut FactorizedEntropyModel,
    frame: u32,
    extent: f64,
) -> Result<(CompensatedSet, LossTrace)> {
    require_views(views)?;
    if clones.is_empty() {
        return Ok((clones, LossTrace::default()));
    }
    let sh_len = crate::model::num_coeffs(cfg.sh_degree);
    let lr = LearningRates { center: cfg.lr.delta_center, ..cfg.lr.clone() };
    let mut params = primitive_tensors(&clones.primitives, sh_len, &lr, extent);
    params.push(entropy_tensor("delta_sh_entropy", sh_model, cfg.lr.entropy));
    let w = weights(cfg);
    let mut rng = stage_rng(cfg.seed, frame, STAGE_COMPENSATION);
    let n_sh = params[4].len();
    let loss = run(cfg.stage2_iters, cfg.lr.final_ratio, &mut params, |it, p| {
        let quant = Quantizer::for_iteration(it, cfg.stage2_iters, cfg.hard_quant_iters, n_sh, &mut rng);
        Ok(stage2_objective(p, fixed, &views[it % views.len()], &w, cfg.q_sh, &quant)?.loss)
    })
    .map_err(|e| with_dump(e, cfg, frame))?;
    sh_model.params = params[5].values.clone();
    let trained = CompensatedSet { primitives: primitives_from(&params), provenance: clones.provenance };
    Ok((crate::compensation::prune_low_opacity(trained, cfg.compensation.prune_opacity), loss))
}
