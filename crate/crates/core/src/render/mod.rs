//! Differentiable pinhole splatting at desk resolutions.
//!
//! Every pixel walks the depth-sorted splat list directly (no tiling). The
//! backward pass re-walks the same list per pixel, so forward and backward
//! see identical skip and early-termination decisions.

mod image;
mod loss;
mod ssim;

use nalgebra::{Matrix2, Matrix2x3};

pub use image::Image;
pub use loss::{loss_color, LossValue};
pub use ssim::{ssim_with_grad, SsimParams};

use crate::model::{sh, sigmoid, Camera, GaussianPrimitive, Mat3, Quat, Vec3};

/// Splats closer than this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic low-pass added to every projected covariance (pixels²).
pub const LOW_PASS: f64 = 0.3;
/// Upper clamp on per-pixel opacity.
pub const MAX_ALPHA: f64 = 0.99;
/// Contributions below this opacity are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
const MAX_CONDITION: f64 = 1e12;

/// A Gaussian projected to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub base_opacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    /// Residual transmittance per pixel.
    pub transmittance: Vec<f64>,
}

/// Gradient of a scalar loss with respect to one primitive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrimitiveGrad {
    pub center: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
    /// Gradient w.r.t. the projected 2D center, used for densification stats.
    pub mean2d: [f64; 2],
    /// Whether the primitive survived culling in this view.
    pub visible: bool,
}

/// Projection with everything the backward pass needs.
struct Projected {
    index: usize,
    splat: Splat2D,
    conic: Matrix2<f64>,
    /// Inclusive pixel bounding box of the region where the splat can pass
    /// the minimum-opacity test.
    bbox: [i64; 4],
    p_cam: Vec3,
    t_mat: Matrix2x3<f64>,
    sigma: Mat3,
    rot: Mat3,
    scale2: Vec3,
    view_vec: Vec3,
    color_mask: [bool; 3],
    degree: usize,
}

fn project_full(g: &GaussianPrimitive, index: usize, cam: &Camera) -> Option<Projected> {
    let w = cam.rotation;
    let p_cam = w * g.center + cam.translation;
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    if !(z > NEAR_PLANE) {
        return None;
    }
    let mean2d = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let t_mat = j * w;
    let rot = g.rotation.to_rotation_matrix();
    let scale2 = g.log_scale.map(|s| (2.0 * s).exp());
    let sigma = rot * Mat3::from_diagonal(&scale2) * rot.transpose();
    let cov = t_mat * sigma * t_mat.transpose() + Matrix2::identity() * LOW_PASS;
    let cov2d = 0.5 * (cov + cov.transpose());
    let eig = cov2d.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return None;
    }
    let conic = cov2d.try_inverse()?;

    let degree = g.sh_degree()?;
    let view_vec = g.center - cam.position();
    let dir = view_vec.normalize();
    let raw = sh::eval_unclamped(&g.sh, degree, &dir);
    let color_mask = raw.map(|v| (0.0..=1.0).contains(&v));
    let color = raw.map(|v| v.clamp(0.0, 1.0));
    let alpha = sigmoid(g.opacity_logit);

    let bbox = if alpha * 255.0 > 1.0 {
        let k = 2.0 * (255.0 * alpha).ln();
        let rx = (k * cov2d[(0, 0)]).sqrt() + 1e-6;
        let ry = (k * cov2d[(1, 1)]).sqrt() + 1e-6;
        [
            (mean2d[0] - rx).ceil() as i64,
            (mean2d[0] + rx).floor() as i64,
            (mean2d[1] - ry).ceil() as i64,
            (mean2d[1] + ry).floor() as i64,
        ]
    } else {
        [1, 0, 1, 0]
    };

    Some(Projected {
        index,
        splat: Splat2D { mean2d, cov2d, depth: z, color, base_opacity: alpha },
        conic,
        bbox,
        p_cam,
        t_mat,
        sigma,
        rot,
        scale2,
        view_vec,
        color_mask,
        degree,
    })
}

/// First-order perspective projection; `None` when culled.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera) -> Option<Splat2D> {
    project_full(g, 0, cam).map(|p| p.splat)
}

/// Per-pixel opacity of a splat, with the Gaussian falloff value.
/// `None` when the contribution is below the skip threshold.
#[inline]
fn pixel_alpha(conic: &Matrix2<f64>, mean: [f64; 2], opacity: f64, px: f64, py: f64) -> Option<Contribution> {
    let dx = px - mean[0];
    let dy = py - mean[1];
    let power = -0.5 * (conic[(0, 0)] * dx * dx + 2.0 * conic[(0, 1)] * dx * dy + conic[(1, 1)] * dy * dy);
    if power > 0.0 {
        return None;
    }
    let falloff = power.exp();
    let raw = opacity * falloff;
    if raw < MIN_ALPHA {
        return None;
    }
    Some(Contribution { alpha: raw.min(MAX_ALPHA), clamped: raw > MAX_ALPHA, falloff, dx, dy })
}

#[derive(Clone, Copy)]
struct Contribution {
    alpha: f64,
    clamped: bool,
    falloff: f64,
    dx: f64,
    dy: f64,
}

/// Front-to-back alpha blending of depth-sorted splats at one pixel.
pub fn composite_pixel(splats: &[Splat2D], pixel: [f64; 2], background: [f64; 3]) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let mut t = 1.0;
    for s in splats {
        let Some(conic) = s.cov2d.try_inverse() else { continue };
        let eig = s.cov2d.symmetric_eigen().eigenvalues;
        if !(eig.min() > 0.0) || eig.max() / eig.min() > MAX_CONDITION {
            continue;
        }
        let Some(c) = pixel_alpha(&conic, s.mean2d, s.base_opacity, pixel[0], pixel[1]) else { continue };
        for k in 0..3 {
            rgb[k] += s.color[k] * c.alpha * t;
        }
        t *= 1.0 - c.alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for k in 0..3 {
        rgb[k] += background[k] * t;
    }
    rgb
}

fn project_sorted(prims: &[GaussianPrimitive], cam: &Camera) -> Vec<Projected> {
    let mut out: Vec<Projected> =
        prims.iter().enumerate().filter_map(|(i, g)| project_full(g, i, cam)).collect();
    out.sort_by(|a, b| a.splat.depth.total_cmp(&b.splat.depth).then(a.index.cmp(&b.index)));
    out
}

/// Splats (by position in the sorted list) touching each pixel, front to back.
fn walk_pixel(sorted: &[Projected], px: i64, py: i64, mut visit: impl FnMut(usize, Contribution, f64)) -> f64 {
    let mut t = 1.0;
    for (k, p) in sorted.iter().enumerate() {
        if px < p.bbox[0] || px > p.bbox[1] || py < p.bbox[2] || py > p.bbox[3] {
            continue;
        }
        let Some(c) = pixel_alpha(&p.conic, p.splat.mean2d, p.splat.base_opacity, px as f64, py as f64) else {
            continue;
        };
        visit(k, c, t);
        t *= 1.0 - c.alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    t
}

pub fn render(prims: &[GaussianPrimitive], cam: &Camera, background: [f64; 3]) -> RenderedImage {
    let sorted = project_sorted(prims, cam);
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::new(w, h);
    let mut transmittance = vec![1.0; w * h];
    for py in 0..h {
        for px in 0..w {
            let mut rgb = [0.0; 3];
            let t = walk_pixel(&sorted, px as i64, py as i64, |k, c, t| {
                let col = sorted[k].splat.color;
                for ch in 0..3 {
                    rgb[ch] += col[ch] * c.alpha * t;
                }
            });
            let i = py * w + px;
            for ch in 0..3 {
                image.data[3 * i + ch] = rgb[ch] + background[ch] * t;
            }
            transmittance[i] = t;
        }
    }
    RenderedImage { image, transmittance }
}

/// Per-splat accumulators in screen space.
#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
}

/// Gradients of `Σ grad_pixels ⊙ render(...)` with respect to every
/// primitive. `grad_pixels` has the interleaved RGB layout of [`Image`].
pub fn render_backward(
    prims: &[GaussianPrimitive],
    cam: &Camera,
    background: [f64; 3],
    grad_pixels: &[f64],
) -> Vec<PrimitiveGrad> {
    let sorted = project_sorted(prims, cam);
    let (w, h) = (cam.width, cam.height);
    assert_eq!(grad_pixels.len(), w * h * 3, "pixel gradient size");
    let mut screen = vec![ScreenGrad::default(); sorted.len()];
    let mut hits: Vec<(usize, Contribution, f64)> = Vec::new();

    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let g = [grad_pixels[3 * i], grad_pixels[3 * i + 1], grad_pixels[3 * i + 2]];
            if g == [0.0; 3] {
                continue;
            }
            hits.clear();
            let t_end = walk_pixel(&sorted, px as i64, py as i64, |k, c, t| hits.push((k, c, t)));
            // Color accumulated behind the current splat, including background.
            let mut behind = [background[0] * t_end, background[1] * t_end, background[2] * t_end];
            for &(k, c, t) in hits.iter().rev() {
                let p = &sorted[k];
                let col = p.splat.color;
                let sg = &mut screen[k];
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    sg.color[ch] += g[ch] * c.alpha * t;
                    d_alpha += g[ch] * (col[ch] * t - behind[ch] / (1.0 - c.alpha));
                }
                for ch in 0..3 {
                    behind[ch] += col[ch] * c.alpha * t;
                }
                if c.clamped {
                    continue;
                }
                // alpha' = opacity · exp(power)
                sg.alpha += d_alpha * c.falloff;
                let d_power = d_alpha * c.alpha;
                let (a, b, cc) = (p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]);
                sg.mean[0] += d_power * (a * c.dx + b * c.dy);
                sg.mean[1] += d_power * (b * c.dx + cc * c.dy);
                sg.conic[0] += d_power * (-0.5 * c.dx * c.dx);
                sg.conic[1] += d_power * (-c.dx * c.dy);
                sg.conic[2] += d_power * (-0.5 * c.dy * c.dy);
            }
        }
    }

    let mut grads: Vec<PrimitiveGrad> = prims
        .iter()
        .map(|g| PrimitiveGrad { sh: vec![0.0; g.sh.len()], ..Default::default() })
        .collect();
    for (p, sg) in sorted.iter().zip(screen.iter()) {
        let g = &prims[p.index];
        let out = &mut grads[p.index];
        out.visible = true;
        out.mean2d = sg.mean;
        primitive_backward(g, p, sg, cam, out);
    }
    grads
}

fn primitive_backward(g: &GaussianPrimitive, p: &Projected, sg: &ScreenGrad, cam: &Camera, out: &mut PrimitiveGrad) {
    // conic = cov⁻¹, written in full-matrix form (b sits in two entries).
    let g_inv = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov = -(p.conic * g_inv * p.conic);
    // cov = T Σ Tᵀ + low-pass
    let g_t = 2.0 * g_cov * p.t_mat * p.sigma;
    let g_sigma = p.t_mat.transpose() * g_cov * p.t_mat;
    // Σ = R S² Rᵀ
    let s2 = Mat3::from_diagonal(&p.scale2);
    let g_rot = 2.0 * g_sigma * p.rot * s2;
    let inner = p.rot.transpose() * g_sigma * p.rot;
    for k in 0..3 {
        out.log_scale[k] += inner[(k, k)] * 2.0 * p.scale2[k];
    }
    out.rotation = g.rotation.rotation_matrix_backward(&g_rot).to_array();

    // T = J W
    let g_j = g_t * cam.rotation.transpose();
    let (x, y, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_cam = Vec3::zeros();
    g_cam.x += g_j[(0, 2)] * (-fx / z2);
    g_cam.y += g_j[(1, 2)] * (-fy / z2);
    g_cam.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    // mean2d = f·(x, y)/z + c
    g_cam.x += sg.mean[0] * fx / z;
    g_cam.y += sg.mean[1] * fy / z;
    g_cam.z += -sg.mean[0] * fx * x / z2 - sg.mean[1] * fy * y / z2;
    out.center += cam.rotation.transpose() * g_cam;

    // color = clamp(0.5 + Σ f_k Y_k(dir))
    let n = p.view_vec.norm();
    let dir = p.view_vec / n;
    let mut basis = [0.0; 16];
    let mut dbasis = [[0.0; 3]; 16];
    sh::basis(p.degree, &dir, &mut basis);
    sh::basis_gradient(p.degree, &dir, &mut dbasis);
    let mut g_dir = Vec3::zeros();
    for ch in 0..3 {
        if !p.color_mask[ch] {
            continue;
        }
        let gc = sg.color[ch];
        for k in 0..sh::num_basis(p.degree) {
            out.sh[k * 3 + ch] += gc * basis[k];
            let f = g.sh[k * 3 + ch] * gc;
            g_dir += Vec3::new(dbasis[k][0], dbasis[k][1], dbasis[k][2]) * f;
        }
    }
    out.center += (g_dir - dir * dir.dot(&g_dir)) / n;

    let alpha = p.splat.base_opacity;
    out.opacity_logit += sg.alpha * alpha * (1.0 - alpha);
}

/// Convenience for tests and tools: the rotation gradient as a quaternion.
impl PrimitiveGrad {
    pub fn rotation_quat(&self) -> Quat {
        Quat::from_array(self.rotation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{num_coeffs, GaussianPrimitive, Quat, SH_C0};

    fn axis_camera(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(f, f, w as f64 / 2.0, h as f64 / 2.0, Mat3::identity(), Vec3::zeros(), w, h).unwrap()
    }

    fn prim(center: [f64; 3], log_scale: f64, opacity: f64, rgb: [f64; 3]) -> GaussianPrimitive {
        let mut sh = vec![0.0; num_coeffs(1)];
        for c in 0..3 {
            sh[c] = (rgb[c] - 0.5) / SH_C0;
        }
        GaussianPrimitive {
            center: Vec3::from(center),
            rotation: Quat::IDENTITY,
            log_scale: Vec3::repeat(log_scale),
            opacity_logit: crate::model::logit(opacity),
            sh,
        }
    }

    #[test]
    fn on_axis_projection() {
        let cam = axis_camera(64, 64, 100.0);
        let s = project_gaussian(&prim([0.0, 0.0, 1.0], -3.0, 0.5, [0.5; 3]), &cam).unwrap();
        assert_eq!(s.mean2d, [32.0, 32.0]);
    }

    #[test]
    fn isotropic_projected_covariance() {
        let cam = axis_camera(64, 64, 100.0);
        let s = project_gaussian(&prim([0.0, 0.0, 2.0], 0.0, 0.5, [0.5; 3]), &cam).unwrap();
        // J = diag(f/z) on axis, so cov2d = (f/z)² I + 0.3 I.
        let expect = 50.0 * 50.0 + 0.3;
        assert!((s.cov2d[(0, 0)] - expect).abs() < 1e-9);
        assert!((s.cov2d[(1, 1)] - expect).abs() < 1e-9);
        assert!(s.cov2d[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = axis_camera(64, 64, 100.0);
        assert!(project_gaussian(&prim([0.0, 0.0, -1.0], -3.0, 0.5, [0.5; 3]), &cam).is_none());
    }

    fn flat_splat(color: [f64; 3], opacity: f64, depth: f64) -> Splat2D {
        // Huge footprint: falloff ≈ 1 at the center pixel.
        Splat2D {
            mean2d: [0.0, 0.0],
            cov2d: Matrix2::identity() * 1e6,
            depth,
            color,
            base_opacity: opacity,
        }
    }

    #[test]
    fn opaque_front_splat_dominates() {
        let c = composite_pixel(&[flat_splat([0.2, 0.7, 0.4], 1.0, 1.0)], [0.0, 0.0], [0.0; 3]);
        // Opacity is clamped at 0.99, leaving 1% background.
        for k in 0..3 {
            assert!((c[k] - 0.99 * [0.2, 0.7, 0.4][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_half_opaque_splats() {
        let splats = [flat_splat([1.0, 0.0, 0.0], 0.5, 1.0), flat_splat([0.0, 1.0, 0.0], 0.5, 2.0)];
        let c = composite_pixel(&splats, [0.0, 0.0], [0.0; 3]);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.25).abs() < 1e-12);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn no_splats_gives_background() {
        assert_eq!(composite_pixel(&[], [3.0, 4.0], [0.1, 0.2, 0.3]), [0.1, 0.2, 0.3]);
        let cam = axis_camera(8, 6, 10.0);
        let r = render(&[], &cam, [0.1, 0.2, 0.3]);
        assert_eq!(r.image, Image::filled(8, 6, [0.1, 0.2, 0.3]));
        assert!(r.transmittance.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn brightest_pixel_at_projection() {
        let cam = axis_camera(32, 32, 40.0);
        let g = prim([0.1, -0.05, 2.0], -2.5, 0.9, [1.0, 1.0, 1.0]);
        let s = project_gaussian(&g, &cam).unwrap();
        let r = render(&[g], &cam, [0.0; 3]);
        let (mut best, mut arg) = (-1.0, (0, 0));
        for y in 0..32 {
            for x in 0..32 {
                let v = r.image.pixel(x, y)[0];
                if v > best {
                    best = v;
                    arg = (x, y);
                }
            }
        }
        assert_eq!(arg, (s.mean2d[0].round() as usize, s.mean2d[1].round() as usize));
    }

    #[test]
    fn render_matches_composite_pixel() {
        let cam = axis_camera(16, 16, 20.0);
        let prims = vec![
            prim([0.0, 0.0, 2.0], -1.5, 0.7, [0.9, 0.1, 0.2]),
            prim([0.2, 0.1, 2.5], -1.2, 0.6, [0.1, 0.8, 0.3]),
        ];
        let r = render(&prims, &cam, [0.05, 0.05, 0.05]);
        let mut splats: Vec<Splat2D> = prims.iter().filter_map(|g| project_gaussian(g, &cam)).collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth));
        for (x, y) in [(8, 8), (3, 12), (10, 5)] {
            let c = composite_pixel(&splats, [x as f64, y as f64], [0.05; 3]);
            let p = r.image.pixel(x, y);
            for k in 0..3 {
                assert!((c[k] - p[k]).abs() < 1e-12);
            }
        }
    }
}
