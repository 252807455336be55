//! Selection of under-fitted regions after motion estimation and the sparse
//! compensated primitives spawned there.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{sigmoid, GaussianPrimitive, Vec3};
use crate::motion::MotionSample;

/// Motion clones shrink by this factor per axis.
pub const MOTION_CLONE_SHRINK: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloneKind {
    Gradient,
    Motion,
}

impl CloneKind {
    pub fn copies(self) -> usize {
        match self {
            CloneKind::Gradient => 1,
            CloneKind::Motion => 2,
        }
    }
}

/// Running mean of the projected-center gradient norm per primitive, over
/// the views in which it was visible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientStats {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl GradientStats {
    pub fn new(n: usize) -> Self {
        GradientStats { sums: vec![0.0; n], counts: vec![0; n] }
    }

    pub fn record(&mut self, index: usize, mean2d_grad: [f64; 2]) {
        self.sums[index] += mean2d_grad[0].hypot(mean2d_grad[1]);
        self.counts[index] += 1;
    }

    pub fn averages(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    }
}

/// Indices whose statistic is strictly above `tau_g`.
pub fn select_gradient_clones(stats: &[f64], tau_g: f64) -> Vec<usize> {
    stats.iter().enumerate().filter(|(_, &s)| s > tau_g).map(|(i, _)| i).collect()
}

/// Indices moving fast (translation or rotation angle above threshold) whose
/// largest log-scale is above `scale_floor`.
pub fn select_motion_clones(
    motions: &[MotionSample],
    log_scales: &[Vec3],
    tau_mu: f64,
    tau_r: f64,
    scale_floor: f64,
) -> Vec<usize> {
    motions
        .iter()
        .zip(log_scales)
        .enumerate()
        .filter(|(_, (m, s))| {
            let fast = m.delta_mu.norm() > tau_mu || m.rotation_angle() > tau_r;
            fast && s.max() > scale_floor
        })
        .map(|(i, _)| i)
        .collect()
}

/// Clone plan under a budget of `cap` new primitives: candidates are ranked
/// by gradient statistic (highest first, then index); a motion candidate
/// spawns motion clones, any other a gradient clone. Candidates that no
/// longer fit the remaining budget are skipped.
pub fn plan_clones(stats: &[f64], gradient: &[usize], motion: &[usize], cap: usize) -> Vec<(usize, CloneKind)> {
    let mut cands: Vec<(usize, CloneKind)> = motion.iter().map(|&i| (i, CloneKind::Motion)).collect();
    for &i in gradient {
        if !motion.contains(&i) {
            cands.push((i, CloneKind::Gradient));
        }
    }
    cands.sort_by(|a, b| stats[b.0].total_cmp(&stats[a.0]).then(a.0.cmp(&b.0)));
    let mut used = 0;
    let mut plan = Vec::new();
    for (i, kind) in cands {
        if used + kind.copies() <= cap {
            used += kind.copies();
            plan.push((i, kind));
        }
    }
    plan.sort_by_key(|&(i, _)| i);
    plan
}

/// Clone budget for a frame following one with `prev_count` primitives.
pub fn clone_cap(prev_count: usize, fraction: f64) -> usize {
    (prev_count as f64 * fraction).ceil() as usize
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the clones of primitive `index` at `frame`.
pub fn clone_rng(seed: u64, frame: u32, index: usize) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ frame as u64) ^ index as u64);
    ChaCha8Rng::seed_from_u64(s)
}

/// A point drawn from `N(μ, 2Σ)` of `source`.
fn sample_center(source: &GaussianPrimitive, rng: &mut ChaCha8Rng) -> Vec3 {
    let z = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
    let scaled = source.log_scale.map(f64::exp).component_mul(&z);
    source.center + source.rotation.to_rotation_matrix() * scaled * std::f64::consts::SQRT_2
}

/// One gradient clone or two motion clones of `source`, centers drawn from
/// `N(μ, 2Σ)`. Motion clones are shrunk by [`MOTION_CLONE_SHRINK`].
pub fn spawn_compensated(source: &GaussianPrimitive, kind: CloneKind, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    (0..kind.copies())
        .map(|_| {
            let mut g = source.clone();
            g.center = sample_center(source, rng);
            if kind == CloneKind::Motion {
                g.log_scale = source.log_scale.map(|s| s - MOTION_CLONE_SHRINK.ln());
            }
            g
        })
        .collect()
}

/// Compensated primitives with the rule that produced each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompensatedSet {
    pub primitives: Vec<GaussianPrimitive>,
    pub provenance: Vec<CloneKind>,
}

impl CompensatedSet {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

/// Drops primitives with opacity below `threshold`, keeping order.
pub fn prune_low_opacity(set: CompensatedSet, threshold: f64) -> CompensatedSet {
    let (primitives, provenance) = set
        .primitives
        .into_iter()
        .zip(set.provenance)
        .filter(|(g, _)| sigmoid(g.opacity_logit) >= threshold)
        .unzip();
    CompensatedSet { primitives, provenance }
}
