//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatcodec::config::LearningRates;
use splatcodec::diff::{finite_diff_check, FdReport, ParamTensor};
use splatcodec::entropy::FactorizedEntropyModel;
use splatcodec::model::{logit, num_coeffs, Camera, GaussianPrimitive, Quat, Vec3};
use splatcodec::motion::{Aabb, GridConfig, MotionMlps, BBOX_DILATION};
use splatcodec::pipeline::objective::{
    grid_channel_map, primitive_tensors, stage1_objective, stage2_objective, LossWeights, MotionContext, Quantizer,
};
use splatcodec::pipeline::View;
use splatcodec::render::render;

pub fn primitive(c: [f64; 3], axis: [f64; 3], angle: f64, s: [f64; 3], alpha: f64, dc: [f64; 3]) -> GaussianPrimitive {
    let mut sh = vec![0.0; num_coeffs(1)];
    for ch in 0..3 {
        sh[ch] = dc[ch];
        for b in 1..4 {
            sh[b * 3 + ch] = 0.05 * (b as f64 - 2.0) + 0.02 * ch as f64;
        }
    }
    GaussianPrimitive {
        center: Vec3::from(c),
        rotation: Quat::from_axis_angle(axis, angle),
        log_scale: Vec3::from(s),
        opacity_logit: logit(alpha),
        sh,
    }
}

/// Four wide primitives near the origin. Seen through [`two_views`] every
/// pixel lies well inside each splat's 1/255 contour, no opacity reaches the
/// 0.99 clamp, colors stay inside [0, 1] and depths stay ordered, so the
/// loss is smooth at finite-difference scale.
pub fn four_gaussians() -> Vec<GaussianPrimitive> {
    vec![
        primitive([0.05, 0.0, 0.3], [0.3, 0.5, 0.8], 0.7, [-0.62, -0.7, -0.66], 0.7, [0.6, -0.4, 0.2]),
        primitive([-0.06, 0.04, 0.1], [1.0, 0.2, -0.3], 1.1, [-0.7, -0.6, -0.65], 0.55, [-0.3, 0.5, 0.1]),
        primitive([0.04, -0.05, -0.1], [0.0, 1.0, 0.4], 0.4, [-0.68, -0.64, -0.7], 0.6, [0.1, 0.2, -0.6]),
        primitive([-0.03, -0.04, -0.3], [0.4, -0.2, 1.0], 2.0, [-0.66, -0.7, -0.6], 0.5, [0.4, 0.3, 0.5]),
    ]
}

pub fn ring_camera(angle: f64, size: usize, focal: f64) -> Camera {
    let eye = Vec3::new(4.0 * angle.sin(), 0.4, -4.0 * angle.cos());
    Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), focal, size, size).unwrap()
}

/// Renders of `truth` from two cameras, brightened by 0.5 so every
/// residual of a nearby scene has one sign and the L1 term has no kink.
pub fn two_views(truth: &[GaussianPrimitive], size: usize) -> Vec<View> {
    [0.3, 1.7]
        .iter()
        .map(|&a| {
            let camera = ring_camera(a, size, size as f64 * 2.5);
            let mut image = render(truth, &camera, [0.1, 0.2, 0.3]).image;
            image.data.iter_mut().for_each(|v| *v += 0.5);
            View { image, camera }
        })
        .collect()
}

pub fn weights() -> LossWeights {
    LossWeights { lambda1: 0.02, lambda2: 0.2, background: [0.1, 0.2, 0.3] }
}

pub fn perturbed_model(channels: usize, rng: &mut ChaCha8Rng) -> FactorizedEntropyModel {
    let mut m = FactorizedEntropyModel::new(channels);
    m.params.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    m
}

fn entropy_tensor(m: FactorizedEntropyModel) -> ParamTensor {
    let n = m.params.len();
    ParamTensor::new("entropy", m.params, vec![n], 1.0)
}

pub fn noise(n: usize, rng: &mut ChaCha8Rng) -> Quantizer {
    Quantizer::Noise((0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
}

fn sum_views<F>(views: &[View], mut f: F) -> splatcodec::Result<f64>
where
    F: FnMut(&View) -> splatcodec::Result<f64>,
{
    views.iter().map(&mut f).sum()
}

/// Finite-difference check of the stage-1 loss summed over two views of a
/// 4-primitive scene moved by a known offset.
pub fn stage1_fd(size: usize, epsilon: f64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let reference = four_gaussians();
    let truth: Vec<GaussianPrimitive> = reference
        .iter()
        .map(|g| {
            let mut m = g.clone();
            m.center += Vec3::new(0.03, -0.02, 0.01);
            m
        })
        .collect();
    let views = two_views(&truth, size);
    let grid = GridConfig { resolutions: vec![2, 3, 4], channels: vec![2, 2, 1] };
    let bbox = Aabb::from_points(reference.iter().map(|g| &g.center), BBOX_DILATION).unwrap();
    let hidden = 6;
    let mut mlps = MotionMlps::init(grid.feature_width(), hidden, &mut rng);
    let mut flat = mlps.to_flat();
    flat.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    mlps = MotionMlps::from_flat(grid.feature_width(), hidden, &flat).unwrap();
    let n = grid.total_len();
    let mut params = vec![
        ParamTensor::new("grid", (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(), vec![n], 1.0),
        ParamTensor::new("mlp", mlps.to_flat(), vec![flat.len()], 1.0),
        entropy_tensor(perturbed_model(grid.total_channels(), &mut rng)),
    ];
    let channel_map = grid_channel_map(&grid);
    let ctx = MotionContext {
        reference: &reference,
        grid: &grid,
        bbox: &bbox,
        channel_map: &channel_map,
        hidden_width: hidden,
        q_grid: 10.0,
    };
    let quant = noise(n, &mut rng);
    let w = weights();
    finite_diff_check(&mut params, epsilon, None, |p| {
        sum_views(&views, |v| Ok(stage1_objective(p, &ctx, v, &w, &quant)?.loss))
    })
    .unwrap()
}

/// Finite-difference check of the stage-2 loss for two compensated
/// primitives over a frozen 4-primitive frame.
pub fn stage2_fd(size: usize, epsilon: f64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let fixed = four_gaussians();
    let mut truth = fixed.clone();
    truth.push(primitive([0.08, 0.06, -0.2], [1.0, 1.0, 0.0], 0.5, [-0.6, -0.65, -0.7], 0.6, [0.8, 0.1, -0.2]));
    let views = two_views(&truth, size);
    let delta = vec![
        primitive([0.06, 0.05, -0.2], [0.2, 1.0, 0.1], 0.9, [-0.62, -0.66, -0.7], 0.5, [0.5, 0.0, 0.0]),
        primitive([-0.05, 0.06, 0.2], [0.7, -0.1, 0.3], 1.3, [-0.7, -0.64, -0.6], 0.4, [-0.1, 0.4, 0.2]),
    ];
    let sh_len = num_coeffs(1);
    let mut params = primitive_tensors(&delta, sh_len, &LearningRates::default(), 1.0);
    params.push(entropy_tensor(perturbed_model(sh_len, &mut rng)));
    let quant = noise(delta.len() * sh_len, &mut rng);
    let w = weights();
    finite_diff_check(&mut params, epsilon, None, |p| {
        sum_views(&views, |v| Ok(stage2_objective(p, &fixed, v, &w, 50.0, &quant)?.loss))
    })
    .unwrap()
}

/// Fits a one-channel entropy model to `symbols` by minimizing the rate of
/// noise-perturbed copies, as the training loops do.
pub fn train_entropy_model(symbols: &[f64], iters: usize, seed: u64) -> FactorizedEntropyModel {
    use splatcodec::diff::Adam;
    use splatcodec::entropy::RateGrad;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = FactorizedEntropyModel::new(1);
    let n = model.params.len();
    let mut params = vec![ParamTensor::new("model", model.params, vec![n], 1e-2)];
    let mut adam = Adam::new();
    let scale = 1.0 / symbols.len() as f64;
    for _ in 0..iters {
        splatcodec::diff::zero_grads(&mut params);
        let m = FactorizedEntropyModel { channels: 1, params: params[0].values.clone() };
        let y: Vec<f64> = symbols.iter().map(|s| s + rng.random_range(-0.5..0.5)).collect();
        m.rate_bits(&y, |_| 0, Some(RateGrad { scale, values: None, params: Some(&mut params[0].grad) }));
        adam.step(&mut params).unwrap();
    }
    FactorizedEntropyModel { channels: 1, params: params[0].values.clone() }
}

/// Integer samples of a rounded normal.
pub fn normal_symbols(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng).round()).collect()
}

/// `Σ pmf` over the integers in `[-1000, 1000]` and the smallest term.
pub fn pmf_window(model: &FactorizedEntropyModel, channel: usize) -> (f64, f64) {
    (-1000..=1000).map(|y| model.pmf_of(channel, y as f64).unwrap()).fold((0.0, f64::INFINITY), |(s, m), p| (s + p, m.min(p)))
}
