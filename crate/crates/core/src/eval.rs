//! Image quality metrics, Bjontegaard deltas and RD-curve CSV reports.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianPrimitive;
use crate::pipeline::View;
use crate::render::{render, ssim_with_grad, Image, SsimParams};

pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_with_grad(a, b, &SsimParams::default(), false)?.0)
}

/// PSNR and SSIM of `prims` rendered into `view`, with the rendering
/// quantized to 8 bits like any image written to disk.
pub fn view_quality(prims: &[GaussianPrimitive], view: &View, background: [f64; 3]) -> Result<(f64, f64)> {
    let img = render(prims, &view.camera, background).image.quantized_8bit();
    Ok((psnr(&img, &view.image)?, ssim(&img, &view.image)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub lambda1: f64,
    pub bits_per_frame: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

/// Least-squares cubic `c0 + c1·x + c2·x² + c3·x³`.
pub fn fit_cubic(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(Error::invalid("a cubic fit needs at least 4 points"));
    }
    // Solved in u = (x − c) / s; raw powers of PSNR-sized x are too ill-conditioned.
    let c = x.iter().sum::<f64>() / x.len() as f64;
    let s = x.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::invalid("a cubic fit needs distinct finite x values"));
    }
    let a = DMatrix::from_fn(x.len(), 4, |i, j| ((x[i] - c) / s).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let u = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::invalid(format!("cubic fit failed: {e}")))?;
    // Σ u_k ((x − c) / s)^k expanded into powers of x.
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    let mut out = [0.0; 4];
    for k in 0..4 {
        for j in 0..=k {
            out[j] += u[k] / s.powi(k as i32) * binom[k][j] * (-c).powi((k - j) as i32);
        }
    }
    Ok(out)
}

pub fn eval_cubic(c: &[f64; 4], x: f64) -> f64 {
    c[0] + x * (c[1] + x * (c[2] + x * c[3]))
}

/// `∫_lo^hi` of the cubic.
pub fn integrate_cubic(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let f = |x: f64| x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)));
    f(hi) - f(lo)
}

fn check_curve(points: &[RdPoint], what: &str) -> Result<()> {
    if points.len() < 4 {
        return Err(Error::invalid(format!("{what} curve has {} points, need 4", points.len())));
    }
    for p in points {
        if !(p.bits_per_frame > 0.0) || !p.psnr_db.is_finite() {
            return Err(Error::invalid(format!("{what} curve has an invalid point {p:?}")));
        }
    }
    let mut rates: Vec<f64> = points.iter().map(|p| p.bits_per_frame).collect();
    rates.sort_by(f64::total_cmp);
    if rates.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("{what} curve has repeated rates")));
    }
    Ok(())
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Mean of `fit(test) − fit(anchor)` over the overlap of the x ranges.
fn mean_gap(xa: &[f64], ya: &[f64], xt: &[f64], yt: &[f64]) -> Result<f64> {
    let (a0, a1) = range(xa);
    let (t0, t1) = range(xt);
    let (lo, hi) = (a0.max(t0), a1.min(t1));
    if !(hi > lo) {
        return Err(Error::invalid("RD curves do not overlap"));
    }
    let ca = fit_cubic(xa, ya)?;
    let ct = fit_cubic(xt, yt)?;
    Ok((integrate_cubic(&ct, lo, hi) - integrate_cubic(&ca, lo, hi)) / (hi - lo))
}

/// `(BDBR %, BD-PSNR dB)` of `test` against `anchor`, on `log₁₀` rate.
pub fn bjontegaard(anchor: &[RdPoint], test: &[RdPoint]) -> Result<(f64, f64)> {
    check_curve(anchor, "anchor")?;
    check_curve(test, "test")?;
    let la: Vec<f64> = anchor.iter().map(|p| p.bits_per_frame.log10()).collect();
    let lt: Vec<f64> = test.iter().map(|p| p.bits_per_frame.log10()).collect();
    let pa: Vec<f64> = anchor.iter().map(|p| p.psnr_db).collect();
    let pt: Vec<f64> = test.iter().map(|p| p.psnr_db).collect();
    let bd_psnr = mean_gap(&la, &pa, &lt, &pt)?;
    let bd_rate = mean_gap(&pa, &la, &pt, &lt)?;
    Ok(((10f64.powf(bd_rate) - 1.0) * 100.0, bd_psnr))
}

/// Where [`rd_report`] puts the fitted curves for `out`.
pub fn fit_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("rd");
    out.with_file_name(format!("{stem}_fit.csv"))
}

const FIT_SAMPLES: usize = 64;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `label,lambda1,bits_per_frame,psnr_db,ssim` rows to `out` and the
/// fitted PSNR over log-rate of every curve to [`fit_path`]`(out)`.
pub fn rd_report(curves: &[RdCurve], out: &Path) -> Result<()> {
    if curves.is_empty() || curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::invalid("no RD points to report"));
    }
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["label", "lambda1", "bits_per_frame", "psnr_db", "ssim"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.label.clone(), num(p.lambda1), num(p.bits_per_frame), num(p.psnr_db), num(p.ssim)])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(fit_path(out))?;
    w.write_record(["label", "log10_bits_per_frame", "psnr_db"])?;
    for c in curves.iter().filter(|c| c.points.len() >= 4) {
        let x: Vec<f64> = c.points.iter().map(|p| p.bits_per_frame.log10()).collect();
        let y: Vec<f64> = c.points.iter().map(|p| p.psnr_db).collect();
        let Ok(coef) = fit_cubic(&x, &y) else { continue };
        let (lo, hi) = range(&x);
        for k in 0..FIT_SAMPLES {
            let xi = lo + (hi - lo) * k as f64 / (FIT_SAMPLES - 1) as f64;
            w.write_record([c.label.clone(), num(xi), num(eval_cubic(&coef, xi))])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    label: String,
    lambda1: f64,
    bits_per_frame: f64,
    psnr_db: f64,
    ssim: f64,
}

/// Parses a file written by [`rd_report`], curves in first-seen order.
pub fn read_rd_report(path: &Path) -> Result<Vec<RdCurve>> {
    let mut curves: Vec<RdCurve> = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let r: Row = row?;
        let p = RdPoint { lambda1: r.lambda1, bits_per_frame: r.bits_per_frame, psnr_db: r.psnr_db, ssim: r.ssim };
        match curves.iter_mut().find(|c| c.label == r.label) {
            Some(c) => c.points.push(p),
            None => curves.push(RdCurve { label: r.label, points: vec![p] }),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, [0.5; 3]);
        let b = Image::filled(8, 8, [0.6; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Image::new(4, 4)).is_err());
    }

    #[test]
    fn cubic_integral() {
        let c = [1.0, -2.0, 0.5, 0.25];
        let (lo, hi) = (-1.0, 2.0);
        let n = 100_000;
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            s += eval_cubic(&c, lo + (k as f64 + 0.5) * h) * h;
        }
        assert!((integrate_cubic(&c, lo, hi) - s).abs() < 1e-8);
    }

    #[test]
    fn bad_curves_rejected() {
        let p = |r: f64, q: f64| RdPoint { lambda1: 0.0, bits_per_frame: r, psnr_db: q, ssim: 1.0 };
        let a = vec![p(1e3, 30.0), p(2e3, 32.0), p(4e3, 34.0), p(8e3, 35.0)];
        let far = vec![p(1e6, 30.0), p(2e6, 32.0), p(4e6, 34.0), p(8e6, 35.0)];
        assert!(bjontegaard(&a, &far).is_err());
        assert!(bjontegaard(&a, &a[..3]).is_err());
        let dup = vec![p(1e3, 30.0), p(1e3, 32.0), p(4e3, 34.0), p(8e3, 35.0)];
        assert!(bjontegaard(&a, &dup).is_err());
    }
}
