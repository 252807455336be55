//! Mean structural similarity over fully-contained Gaussian windows, with
//! its gradient with respect to the first image.

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

impl SsimParams {
    fn kernel(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let mut k: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters an output-sized plane back to `h × w`.
fn filter_adjoint(g: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM of `a` against `b`, averaged over channels and valid windows.
/// When `want_grad` is set, also returns d(SSIM)/d(a) in image layout.
pub fn ssim_with_grad(
    a: &Image,
    b: &Image,
    params: &SsimParams,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w < params.window || h < params.window {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} image smaller than the {} pixel SSIM window",
            params.window
        )));
    }
    let k = params.kernel();
    let c1 = (params.k1 * params.data_range).powi(2);
    let c2 = (params.k2 * params.data_range).powi(2);
    let (ow, oh) = (w + 1 - k.len(), h + 1 - k.len());
    let count = (3 * ow * oh) as f64;

    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = filter(&x, w, h, &k);
        let mu_y = filter(&y, w, h, &k);
        let e_xx = filter(&xx, w, h, &k);
        let e_yy = filter(&yy, w, h, &k);
        let e_xy = filter(&xy, w, h, &k);

        let n = ow * oh;
        let (mut g_mu, mut g_xx, mut g_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = e_xx[i] - mx * mx;
            let syy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let inv = 1.0 / (b1 * b2);
                g_mu[i] = (2.0 * my * a2 - 2.0 * my * a1) * inv - s * (2.0 * mx / b1 - 2.0 * mx / b2);
                g_xx[i] = -s / b2;
                g_xy[i] = 2.0 * a1 * inv;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let d_mu = filter_adjoint(&g_mu, w, h, &k);
            let d_xx = filter_adjoint(&g_xx, w, h, &k);
            let d_xy = filter_adjoint(&g_xy, w, h, &k);
            for p in 0..w * h {
                grad[3 * p + ch] = (d_mu[p] + 2.0 * x[p] * d_xx[p] + y[p] * d_xy[p]) / count;
            }
        }
    }
    Ok((total / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, phase: f64) -> Image {
        let data = (0..w * h * 3)
            .map(|i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin() * ((i / 3) as f64 * 0.11).cos())
            .collect();
        Image::from_data(w, h, data).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let a = textured(16, 14, 0.0);
        let (s, _) = ssim_with_grad(&a, &a, &SsimParams::default(), false).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [0.6; 3]);
        let (s, _) = ssim_with_grad(&a, &b, &SsimParams::default(), false).unwrap();
        let expect = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        assert!((s - expect).abs() < 1e-9, "{s} vs {expect}");
        assert!((s - 0.98362).abs() < 5e-5);
    }

    #[test]
    fn inverted_image_scores_lower() {
        let a = textured(16, 16, 0.3);
        let inv = Image::from_data(16, 16, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let p = SsimParams::default();
        assert!(ssim_with_grad(&a, &inv, &p, false).unwrap().0 < ssim_with_grad(&a, &a, &p, false).unwrap().0);
    }

    #[test]
    fn too_small_rejected() {
        let a = Image::new(10, 20);
        assert!(ssim_with_grad(&a, &a, &SsimParams::default(), false).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = textured(13, 12, 0.1);
        let b = textured(13, 12, 0.9);
        let p = SsimParams::default();
        let (_, g) = ssim_with_grad(&a, &b, &p, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for i in (0..a.data.len()).step_by(17) {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[i] += h;
            am.data[i] -= h;
            let fd = (ssim_with_grad(&ap, &b, &p, false).unwrap().0 - ssim_with_grad(&am, &b, &p, false).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }
}
