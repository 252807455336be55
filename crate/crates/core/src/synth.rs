//! Seeded synthetic dynamic scenes: a handful of Gaussians under scripted
//! rigid motion with one newly appearing primitive, seen by a camera ring.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logit, num_coeffs, write_raw_frame, Camera, GaussianFrameSet, GaussianPrimitive, Quat, Vec3, SH_C0};
use crate::pipeline::View;
use crate::render::render;

pub const RING_RADIUS: f64 = 2.5;
pub const DEFAULT_FOCAL: f64 = 70.0;
pub const DEFAULT_SIZE: usize = 64;
/// Scripted translations are multiples of this, and centers of its quarter,
/// so frame-to-frame differences are exact in binary floating point.
const LATTICE: f64 = 1.0 / 1024.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Translate,
    Rotate,
    Mixed,
    /// Static apart from the new primitive.
    Birth,
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(MotionKind::Translate),
            "rotate" => Ok(MotionKind::Rotate),
            "mixed" => Ok(MotionKind::Mixed),
            "birth" => Ok(MotionKind::Birth),
            _ => Err(Error::invalid(format!("unknown motion kind `{s}` (translate|rotate|mixed|birth)"))),
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MotionKind::Translate => "translate",
            MotionKind::Rotate => "rotate",
            MotionKind::Mixed => "mixed",
            MotionKind::Birth => "birth",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_frames: usize,
    pub n_gaussians: usize,
    pub n_views: usize,
    pub kind: MotionKind,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl SynthParams {
    pub fn new(seed: u64, n_frames: usize, n_gaussians: usize, n_views: usize, kind: MotionKind) -> Self {
        SynthParams {
            seed,
            n_frames,
            n_gaussians,
            n_views,
            kind,
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            focal: DEFAULT_FOCAL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::invalid(format!("need at least 2 frames, got {}", self.n_frames)));
        }
        if self.n_views < 2 {
            return Err(Error::invalid(format!("need at least 2 views, got {}", self.n_views)));
        }
        if self.n_gaussians < 4 {
            return Err(Error::invalid(format!("need at least 4 Gaussians, got {}", self.n_gaussians)));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return Err(Error::invalid("bad image size or focal length"));
        }
        Ok(())
    }
}

/// Rigid motion applied between consecutive frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMotion {
    pub translation: [f64; 3],
    /// Rotation about the vertical axis through the origin, radians.
    pub yaw: f64,
}

impl FrameMotion {
    fn apply(&self, g: &GaussianPrimitive) -> GaussianPrimitive {
        let mut out = g.clone();
        if self.yaw != 0.0 {
            let q = Quat::from_axis_angle([0.0, 1.0, 0.0], self.yaw);
            out.center = q.to_rotation_matrix() * g.center;
            out.rotation = (q * g.rotation).normalized().unwrap_or(g.rotation);
        }
        out.center += Vec3::from(self.translation);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub params: SynthParams,
    /// Ground truth, frame 1 first.
    pub frames: Vec<GaussianFrameSet>,
    /// `motions[k]` takes frame `k + 1` to frame `k + 2`.
    pub motions: Vec<FrameMotion>,
    /// 1-based frame in which the extra primitive first appears.
    pub birth_frame: usize,
    pub cameras: Vec<Camera>,
    /// Held out, halfway between the first two training cameras.
    pub test_camera: Camera,
}

/// Distance of a newborn primitive from its parent, in parent scales.
const BIRTH_OFFSET: f64 = 1.5;

fn snap(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn random_primitive(rng: &mut ChaCha8Rng, center: Vec3) -> GaussianPrimitive {
    let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)];
    let rotation = Quat::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::PI));
    let log_scale = Vec3::from_fn(|_, _| rng.random_range(0.07f64..0.14).ln());
    let mut sh = vec![0.0; num_coeffs(1)];
    for c in 0..3 {
        sh[c] = (rng.random_range(0.15..0.95) - 0.5) / SH_C0;
    }
    for v in sh[3..].iter_mut() {
        *v = rng.random_range(-0.15..0.15);
    }
    GaussianPrimitive { center, rotation, log_scale, opacity_logit: logit(rng.random_range(0.7..0.95)), sh }
}

impl SyntheticScene {
    pub fn generate(params: SynthParams) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut base = Vec::with_capacity(params.n_gaussians);
        for _ in 0..params.n_gaussians {
            let c = Vec3::from_fn(|_, _| snap(rng.random_range(-0.55..0.55), LATTICE / 4.0));
            base.push(random_primitive(&mut rng, c));
        }

        let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0));
        let dir = dir / dir.norm().max(1e-9);
        let step = dir.map(|v| snap(0.04 * v, LATTICE));
        let motion = match params.kind {
            MotionKind::Translate => FrameMotion { translation: step.into(), yaw: 0.0 },
            MotionKind::Rotate => FrameMotion { translation: [0.0; 3], yaw: 0.06 },
            MotionKind::Mixed => FrameMotion { translation: (step * 0.5).map(|v| snap(v, LATTICE)).into(), yaw: 0.04 },
            MotionKind::Birth => FrameMotion { translation: [0.0; 3], yaw: 0.0 },
        };
        let motions = vec![motion; params.n_frames - 1];

        let birth_frame = params.n_frames / 2 + 1;
        let parent = rng.random_range(0..params.n_gaussians);
        let offset_dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let offset_dir = offset_dir / offset_dir.norm().max(1e-9);

        let mut frames = vec![GaussianFrameSet::new(base, 1)];
        for t in 2..=params.n_frames {
            let prev = &frames[t - 2];
            let mut prims: Vec<GaussianPrimitive> = prev.primitives.iter().map(|g| motions[t - 2].apply(g)).collect();
            if t == birth_frame {
                let p = &prims[parent];
                let sigma = p.log_scale.max().exp();
                let center = (p.center + offset_dir * BIRTH_OFFSET * sigma).map(|v| snap(v, LATTICE / 4.0));
                let mut born = random_primitive(&mut rng, center);
                born.sh = p.sh.clone();
                born.opacity_logit = p.opacity_logit;
                prims.push(born);
            }
            frames.push(GaussianFrameSet::new(prims, t as u32));
        }

        let ring = |angle: f64| -> Result<Camera> {
            let eye = Vec3::new(RING_RADIUS * angle.sin(), 0.6, -RING_RADIUS * angle.cos());
            Camera::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), params.focal, params.width, params.height)
        };
        let n = params.n_views as f64;
        let cameras = (0..params.n_views)
            .map(|k| ring(std::f64::consts::TAU * k as f64 / n))
            .collect::<Result<Vec<_>>>()?;
        let test_camera = ring(std::f64::consts::PI / n)?;
        Ok(SyntheticScene { params, frames, motions, birth_frame, cameras, test_camera })
    }

    fn view(&self, frame: usize, camera: &Camera) -> View {
        let img = render(&self.frames[frame - 1].primitives, camera, [0.0; 3]).image.quantized_8bit();
        View { camera: camera.clone(), image: img }
    }

    /// Training views of 1-based `frame`, 8-bit quantized as stored on disk.
    pub fn views(&self, frame: usize) -> Vec<View> {
        self.cameras.iter().map(|c| self.view(frame, c)).collect()
    }

    pub fn all_views(&self) -> Vec<Vec<View>> {
        (1..=self.params.n_frames).map(|t| self.views(t)).collect()
    }

    pub fn test_view(&self, frame: usize) -> View {
        self.view(frame, &self.test_camera)
    }

    /// Ground truth of frame 1 with seeded perturbations, the starting
    /// point of keyframe training.
    pub fn keyframe_init(&self) -> Vec<GaussianPrimitive> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ 0x6B65_7966_7261_6D65);
        let pos = Normal::new(0.0, 0.02).expect("valid deviation");
        let small = Normal::new(0.0, 0.1).expect("valid deviation");
        self.frames[0]
            .primitives
            .iter()
            .map(|g| {
                let mut p = g.clone();
                p.center += Vec3::from_fn(|_, _| pos.sample(&mut rng));
                p.log_scale += Vec3::from_fn(|_, _| small.sample(&mut rng));
                p.opacity_logit += 3.0 * small.sample(&mut rng);
                p.sh.iter_mut().for_each(|v| *v += small.sample(&mut rng));
                p
            })
            .collect()
    }

    /// Writes `scene.json`, camera lists, the keyframe starting point
    /// `init.4dgs`, ground-truth `.4dgs` files and PPM views under `frame_NNN/`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = SceneMeta { params: self.params.clone(), motions: self.motions.clone(), birth_frame: self.birth_frame };
        std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&meta)?)?;
        Camera::save_list(&self.cameras, &dir.join("cameras.json"))?;
        Camera::save_list(std::slice::from_ref(&self.test_camera), &dir.join("test_camera.json"))?;
        let init = GaussianFrameSet::new(self.keyframe_init(), 1);
        write_raw_frame(&init, BufWriter::new(File::create(dir.join("init.4dgs"))?))?;
        for t in 1..=self.params.n_frames {
            let fdir = dir.join(frame_dir_name(t));
            std::fs::create_dir_all(&fdir)?;
            write_raw_frame(&self.frames[t - 1], BufWriter::new(File::create(fdir.join("truth.4dgs"))?))?;
            for (k, v) in self.views(t).iter().enumerate() {
                v.image.save(&fdir.join(format!("view_{k:02}.ppm")))?;
            }
            self.test_view(t).image.save(&fdir.join("test.ppm"))?;
        }
        Ok(())
    }
}

/// `frame_001` for frame 1.
pub fn frame_dir_name(frame: usize) -> String {
    format!("frame_{frame:03}")
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    params: SynthParams,
    motions: Vec<FrameMotion>,
    birth_frame: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translate_moves_by_exact_script() {
        let s = SyntheticScene::generate(SynthParams::new(3, 4, 6, 3, MotionKind::Translate)).unwrap();
        let d = Vec3::from(s.motions[0].translation);
        assert!(d.norm() > 0.0);
        for t in 1..4 {
            let (a, b) = (&s.frames[t - 1], &s.frames[t]);
            for (p, q) in a.primitives.iter().zip(&b.primitives) {
                assert_eq!(q.center - p.center, d);
            }
        }
    }

    #[test]
    fn one_birth() {
        let s = SyntheticScene::generate(SynthParams::new(1, 5, 8, 4, MotionKind::Birth)).unwrap();
        assert_eq!(s.birth_frame, 3);
        let counts: Vec<usize> = s.frames.iter().map(|f| f.len()).collect();
        assert_eq!(counts, vec![8, 8, 9, 9, 9]);
        assert_eq!(s.frames[1].primitives, s.frames[0].primitives);
    }

    #[test]
    fn counts_validated() {
        assert!(SyntheticScene::generate(SynthParams::new(0, 1, 8, 4, MotionKind::Birth)).is_err());
        assert!(SyntheticScene::generate(SynthParams::new(0, 3, 8, 1, MotionKind::Birth)).is_err());
        assert!(SyntheticScene::generate(SynthParams::new(0, 3, 3, 4, MotionKind::Birth)).is_err());
        assert!("spin".parse::<MotionKind>().is_err());
        assert_eq!("mixed".parse::<MotionKind>().unwrap(), MotionKind::Mixed);
    }
}
