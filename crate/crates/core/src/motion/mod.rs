//! Multi-resolution motion grid, positional encoding and the two shared
//! motion MLPs that turn sampled grid features into a per-primitive
//! translation and rotation.

mod mlp;

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{Mlp, MlpTrace};

use crate::error::{Error, Result};
use crate::model::{mul_backward, normalize_backward, GaussianFrameSet, GaussianPrimitive, Quat, Vec3};

pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
/// The keyframe's center extent is dilated by this factor to form the grid box.
pub const BBOX_DILATION: f64 = 1.1;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub resolutions: Vec<usize>,
    pub channels: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { resolutions: vec![16, 32, 64], channels: vec![4, 4, 2] }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() || self.resolutions.len() != self.channels.len() {
            return Err(Error::invalid(format!(
                "grid needs matching non-empty resolutions and channels, got {:?} / {:?}",
                self.resolutions, self.channels
            )));
        }
        if self.resolutions.iter().any(|&n| n < 2) || self.channels.contains(&0) {
            return Err(Error::invalid("grid resolutions must be ≥ 2 and channels ≥ 1"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.resolutions.len()
    }

    pub fn level_len(&self, l: usize) -> usize {
        self.resolutions[l].pow(3) * self.channels[l]
    }

    /// Start of each level inside the flat value buffer.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        (0..self.levels())
            .map(|l| {
                let o = acc;
                acc += self.level_len(l);
                o
            })
            .collect()
    }

    pub fn total_len(&self) -> usize {
        (0..self.levels()).map(|l| self.level_len(l)).sum()
    }

    /// Input width of the motion MLPs: a sin and a cos lookup per level.
    pub fn feature_width(&self) -> usize {
        2 * self.channels.iter().sum::<usize>()
    }

    /// Channel index of each flat grid value, counting channels across levels.
    pub fn channel_of(&self, index: usize) -> usize {
        let mut base = 0;
        let mut start = 0;
        for l in 0..self.levels() {
            let len = self.level_len(l);
            if index < start + len {
                return base + (index - start) % self.channels[l];
            }
            start += len;
            base += self.channels[l];
        }
        panic!("grid index {index} out of range");
    }

    pub fn total_channels(&self) -> usize {
        self.channels.iter().sum()
    }
}

/// Axis-aligned box used to normalize centers to `[0, 1]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Bounds of `points`, dilated about their center by `dilation`.
    /// Flat axes get a small positive extent so normalization stays finite.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>, dilation: f64) -> Result<Self> {
        let mut it = points.into_iter();
        let first = it.next().ok_or_else(|| Error::invalid("bounding box of an empty set"))?;
        let (lo, hi) = it.fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        let c = (lo + hi) * 0.5;
        let half = (hi - lo) * (0.5 * dilation);
        let floor = 1e-3 * half.max().max(1.0);
        let half = half.map(|h| h.max(floor));
        Ok(Aabb { min: (c - half).into(), max: (c + half).into() })
    }

    /// Normalized position in `[0, 1]³`; points outside are clamped.
    pub fn normalize(&self, p: &Vec3) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut clamped = false;
        for k in 0..3 {
            let t = (p[k] - self.min[k]) / (self.max[k] - self.min[k]);
            clamped |= !(0.0..=1.0).contains(&t);
            out[k] = t.clamp(0.0, 1.0);
        }
        if clamped && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("center outside the motion-grid box; clamping to its boundary");
        }
        out
    }

    pub fn extent(&self) -> f64 {
        (0..3).map(|k| (self.max[k] - self.min[k]).powi(2)).sum::<f64>().sqrt() * 0.5
    }
}

/// `(sin(2ˡπ·μ̃), cos(2ˡπ·μ̃))` for `l = 1..=levels`.
pub fn positional_encode(mu_tilde: [f64; 3], levels: usize) -> Vec<([f64; 3], [f64; 3])> {
    (1..=levels)
        .map(|l| {
            let f = (1u64 << l) as f64 * PI;
            (mu_tilde.map(|v| (f * v).sin()), mu_tilde.map(|v| (f * v).cos()))
        })
        .collect()
}

/// The 8 nodes (flat node index) and trilinear weights around `coords`,
/// with align-corners indexing (−1 ↦ node 0, +1 ↦ node `n − 1`).
pub fn trilinear_corners(n: usize, coords: [f64; 3]) -> [(usize, f64); 8] {
    let mut i0 = [0usize; 3];
    let mut t = [0.0; 3];
    for k in 0..3 {
        let u = (coords[k].clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64;
        let base = (u.floor() as usize).min(n - 2);
        i0[k] = base;
        t[k] = u - base as f64;
    }
    let mut out = [(0, 0.0); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
            * (if dy == 1 { t[1] } else { 1.0 - t[1] })
            * (if dz == 1 { t[2] } else { 1.0 - t[2] });
        let (x, y, z) = (i0[0] + dx, i0[1] + dy, i0[2] + dz);
        *slot = ((z * n + y) * n + x, w);
    }
    out
}

/// Trilinear lookup into one level stored as `[((z·N + y)·N + x)·C + c]`.
pub fn grid_sample(level: &[f64], n: usize, channels: usize, coords: [f64; 3]) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for (node, w) in trilinear_corners(n, coords) {
        for c in 0..channels {
            out[c] += w * level[node * channels + c];
        }
    }
    out
}

/// The motion grid `M_t`: all levels in one flat buffer, level after level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionGrid {
    pub config: GridConfig,
    pub bbox: Aabb,
    pub values: Vec<f64>,
}

impl MotionGrid {
    pub fn zeros(config: GridConfig, bbox: Aabb) -> Result<Self> {
        config.validate()?;
        let values = vec![0.0; config.total_len()];
        Ok(MotionGrid { config, bbox, values })
    }

    pub fn from_values(config: GridConfig, bbox: Aabb, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.total_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} grid values for a grid of {}",
                values.len(),
                config.total_len()
            )));
        }
        Ok(MotionGrid { config, bbox, values })
    }

    pub fn level(&self, l: usize) -> &[f64] {
        let start = self.config.offsets()[l];
        &self.values[start..start + self.config.level_len(l)]
    }
}

/// The shared translation and rotation MLPs `Φ_μ` and `Φ_R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionMlps {
    pub phi_mu: Mlp,
    pub phi_r: Mlp,
}

impl MotionMlps {
    pub fn init<R: Rng>(feature_width: usize, hidden: usize, rng: &mut R) -> Self {
        MotionMlps { phi_mu: Mlp::init(feature_width, hidden, 3, rng), phi_r: Mlp::init(feature_width, hidden, 4, rng) }
    }

    pub fn feature_width(&self) -> usize {
        self.phi_mu.inp
    }

    pub fn hidden_width(&self) -> usize {
        self.phi_mu.hidden
    }

    pub fn check_grid(&self, cfg: &GridConfig) -> Result<()> {
        let w = cfg.feature_width();
        if self.phi_mu.inp != w || self.phi_r.inp != w || self.phi_mu.out != 3 || self.phi_r.out != 4 {
            return Err(Error::DimensionMismatch(format!(
                "grid features are {w} wide, MLPs take {} and {}",
                self.phi_mu.inp, self.phi_r.inp
            )));
        }
        Ok(())
    }

    /// `Φ_μ` then `Φ_R` parameters, concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        self.phi_mu.params.iter().chain(&self.phi_r.params).copied().collect()
    }

    pub fn from_flat(feature_width: usize, hidden: usize, flat: &[f64]) -> Result<Self> {
        let n_mu = Mlp::param_count(feature_width, hidden, 3);
        let n_r = Mlp::param_count(feature_width, hidden, 4);
        if flat.len() != n_mu + n_r {
            return Err(Error::DimensionMismatch(format!("{} MLP weights, expected {}", flat.len(), n_mu + n_r)));
        }
        let mut m = MotionMlps {
            phi_mu: Mlp::zeros(feature_width, hidden, 3),
            phi_r: Mlp::zeros(feature_width, hidden, 4),
        };
        m.phi_mu.params.copy_from_slice(&flat[..n_mu]);
        m.phi_r.params.copy_from_slice(&flat[n_mu..]);
        Ok(m)
    }

    pub fn round_to_f32(&mut self) {
        self.phi_mu.round_to_f32();
        self.phi_r.round_to_f32();
    }
}

/// Predicted per-primitive motion. `delta_q` is the raw rotation output; the
/// applied rotation is `normalize((1, 0, 0, 0) + delta_q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionSample {
    pub delta_mu: Vec3,
    pub delta_q: Quat,
}

impl MotionSample {
    pub const ZERO: MotionSample = MotionSample { delta_mu: Vec3::new(0.0, 0.0, 0.0), delta_q: Quat::ZERO };

    pub fn rotation(&self) -> Quat {
        Quat::IDENTITY.add(self.delta_q).normalized().unwrap_or(Quat::IDENTITY)
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation().angle()
    }
}

/// Intermediate values of one prediction, for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MotionTrace {
    /// Per lookup: level, then the 8 weighted nodes.
    lookups: Vec<(usize, [(usize, f64); 8])>,
    features: Vec<f64>,
    mu: MlpTrace,
    r: MlpTrace,
}

/// Grid features for a center: per level, a lookup at the sin band then at
/// the cos band.
fn features(values: &[f64], cfg: &GridConfig, bbox: &Aabb, mu: &Vec3, trace: &mut MotionTrace) {
    let offsets = cfg.offsets();
    let bands = positional_encode(bbox.normalize(mu), cfg.levels());
    trace.lookups.clear();
    trace.features.clear();
    for (l, (s, c)) in bands.into_iter().enumerate() {
        let (n, ch) = (cfg.resolutions[l], cfg.channels[l]);
        let level = &values[offsets[l]..offsets[l] + cfg.level_len(l)];
        for coords in [s, c] {
            let corners = trilinear_corners(n, coords);
            for k in 0..ch {
                trace.features.push(corners.iter().map(|&(node, w)| w * level[node * ch + k]).sum());
            }
            trace.lookups.push((l, corners));
        }
    }
}

/// Runs the motion field on raw grid values, recording a trace.
pub fn predict_traced(
    values: &[f64],
    cfg: &GridConfig,
    bbox: &Aabb,
    mlps: &MotionMlps,
    mu: &Vec3,
    trace: &mut MotionTrace,
) -> MotionSample {
    features(values, cfg, bbox, mu, trace);
    let dm = mlps.phi_mu.forward(&trace.features, &mut trace.mu);
    let dq = mlps.phi_r.forward(&trace.features, &mut trace.r);
    MotionSample { delta_mu: Vec3::new(dm[0], dm[1], dm[2]), delta_q: Quat::new(dq[0], dq[1], dq[2], dq[3]) }
}

/// Pulls gradients on a prediction's outputs back into the grid values and,
/// when given, the MLP parameters (`Φ_μ` then `Φ_R`, as in [`MotionMlps::to_flat`]).
pub fn predict_backward(
    trace: &MotionTrace,
    cfg: &GridConfig,
    mlps: &MotionMlps,
    g_delta_mu: &Vec3,
    g_delta_q: &Quat,
    grid_grad: &mut [f64],
    mlp_grad: Option<&mut [f64]>,
) {
    let n_mu = mlps.phi_mu.params.len();
    let (g_mu_params, g_r_params) = match mlp_grad {
        Some(g) => {
            let (a, b) = g.split_at_mut(n_mu);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let gx_mu = mlps.phi_mu.backward(&trace.features, &trace.mu, g_delta_mu.as_slice(), g_mu_params);
    let gx_r = mlps.phi_r.backward(&trace.features, &trace.r, &g_delta_q.to_array(), g_r_params);
    let offsets = cfg.offsets();
    let mut f = 0;
    for (l, corners) in &trace.lookups {
        let ch = cfg.channels[*l];
        for k in 0..ch {
            let g = gx_mu[f + k] + gx_r[f + k];
            if g != 0.0 {
                for &(node, w) in corners {
                    grid_grad[offsets[*l] + node * ch + k] += w * g;
                }
            }
        }
        f += ch;
    }
}

pub fn predict_motion(mu: &Vec3, grid: &MotionGrid, mlps: &MotionMlps) -> Result<MotionSample> {
    mlps.check_grid(&grid.config)?;
    Ok(predict_traced(&grid.values, &grid.config, &grid.bbox, mlps, mu, &mut MotionTrace::default()))
}

/// Moves one primitive. Exactly-zero outputs leave the pose untouched bit for bit.
pub fn apply_sample(g: &GaussianPrimitive, s: &MotionSample) -> GaussianPrimitive {
    let mut out = g.clone();
    for k in 0..3 {
        if s.delta_mu[k] != 0.0 {
            out.center[k] += s.delta_mu[k];
        }
    }
    if s.delta_q != Quat::ZERO {
        out.rotation = (s.rotation() * g.rotation).normalized().unwrap_or(g.rotation);
    }
    out
}

/// Gradients of the moved center and (unnormalized) rotation pulled back to
/// the motion sample.
pub fn apply_backward(base_rotation: Quat, s: &MotionSample, g_center: &Vec3, g_rotation: Quat) -> (Vec3, Quat) {
    let raw = Quat::IDENTITY.add(s.delta_q);
    let delta = s.rotation();
    let prod = delta * base_rotation;
    let g_prod = normalize_backward(prod, g_rotation);
    let (g_delta, _) = mul_backward(delta, base_rotation, g_prod);
    (*g_center, normalize_backward(raw, g_delta))
}

/// `G'_t`: every primitive of `prev` moved by the motion field. Appearance
/// parameters are copied unchanged.
pub fn apply_motion(prev: &GaussianFrameSet, grid: &MotionGrid, mlps: &MotionMlps) -> Result<GaussianFrameSet> {
    mlps.check_grid(&grid.config)?;
    let mut trace = MotionTrace::default();
    let primitives = prev
        .primitives
        .iter()
        .map(|g| {
            let s = predict_traced(&grid.values, &grid.config, &grid.bbox, mlps, &g.center, &mut trace);
            apply_sample(g, &s)
        })
        .collect();
    Ok(GaussianFrameSet::new(primitives, prev.frame_index + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn unit_box() -> Aabb {
        Aabb { min: [0.0; 3], max: [1.0; 3] }
    }

    #[test]
    fn encoding_at_origin() {
        let e = positional_encode([0.0; 3], 3);
        assert_eq!(e.len(), 3);
        for (s, c) in e {
            assert_eq!(s, [0.0; 3]);
            assert_eq!(c, [1.0; 3]);
        }
    }

    #[test]
    fn encoding_quarter_turn() {
        let e = positional_encode([0.25, 0.0, 0.0], 1);
        assert!((e[0].0[0] - 1.0).abs() < 1e-15);
        assert!(e[0].1[0].abs() < 1e-15);
    }

    #[test]
    fn encoding_width() {
        let n: usize = positional_encode([0.3, 0.6, 0.9], 3).iter().map(|_| 6).sum();
        assert_eq!(n, 18);
    }

    #[test]
    fn sample_at_node_and_cell_center() {
        let n = 4;
        let level: Vec<f64> = (0..n * n * n * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        // Node (1, 2, 3) sits at coordinate −1 + 2·i/(n−1).
        let coord = |i: usize| -1.0 + 2.0 * i as f64 / 3.0;
        let v = grid_sample(&level, n, 2, [coord(1), coord(2), coord(3)]);
        let node = (3 * n + 2) * n + 1;
        assert!((v[0] - level[node * 2]).abs() < 1e-14);
        assert!((v[1] - level[node * 2 + 1]).abs() < 1e-14);

        let mid = |i: usize| -1.0 + (2.0 * i as f64 + 1.0) / 3.0;
        let v = grid_sample(&level, n, 2, [mid(0), mid(1), mid(2)]);
        let mut mean = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    mean += level[(((2 + dz) * n + 1 + dy) * n + dx) * 2] / 8.0;
                }
            }
        }
        assert!((v[0] - mean).abs() < 1e-14);
    }

    #[test]
    fn zero_final_layers_give_identity_motion() {
        let cfg = GridConfig { resolutions: vec![4, 5, 6], channels: vec![4, 4, 2] };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..cfg.total_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = MotionGrid::from_values(cfg.clone(), unit_box(), values).unwrap();
        let mlps = MotionMlps::init(cfg.feature_width(), 64, &mut rng);
        let s = predict_motion(&Vec3::new(0.3, 0.7, 0.1), &grid, &mlps).unwrap();
        assert_eq!(s.delta_mu, Vec3::zeros());
        assert_eq!(s.rotation(), Quat::IDENTITY);
    }

    #[test]
    fn feature_width_mismatch_rejected() {
        let cfg = GridConfig::default();
        let grid = MotionGrid::zeros(GridConfig { resolutions: vec![2, 2], channels: vec![1, 1] }, unit_box()).unwrap();
        let mlps = MotionMlps::init(cfg.feature_width(), 8, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(predict_motion(&Vec3::zeros(), &grid, &mlps).is_err());
    }

    #[test]
    fn composed_quarter_turns() {
        let half = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        // Choose δ so that normalize(1 + δ) is the quarter turn.
        let s = MotionSample { delta_mu: Vec3::zeros(), delta_q: half.sub(Quat::IDENTITY) };
        let g = GaussianPrimitive {
            center: Vec3::zeros(),
            rotation: half,
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            sh: vec![0.0; 3],
        };
        let out = apply_sample(&g, &s);
        let expect = Quat::from_axis_angle([0.0, 0.0, 1.0], 2.0 * FRAC_PI_2);
        assert!(out.rotation.sub(expect).norm() < 1e-12 || out.rotation.add(expect).norm() < 1e-12);
    }
}
