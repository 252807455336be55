use super::{ssim_with_grad, Image, SsimParams};
use crate::error::{Error, Result};

/// Photometric loss value and its gradient w.r.t. the rendered pixels.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `(1 − λ2)·mean|rendered − truth| + λ2·(1 − SSIM)/2`.
pub fn loss_color(rendered: &Image, truth: &Image, lambda2: f64) -> Result<LossValue> {
    rendered.same_shape(truth)?;
    if !(0.0..=1.0).contains(&lambda2) {
        return Err(Error::invalid(format!("lambda2 {lambda2} outside [0, 1]")));
    }
    let n = rendered.data.len() as f64;
    let l1w = (1.0 - lambda2) / n;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(rendered.data.len());
    for (r, t) in rendered.data.iter().zip(&truth.data) {
        let d = r - t;
        value += d.abs();
        grad.push(if d > 0.0 {
            l1w
        } else if d < 0.0 {
            -l1w
        } else {
            0.0
        });
    }
    value *= (1.0 - lambda2) / n;
    if lambda2 > 0.0 {
        let (s, g) = ssim_with_grad(rendered, truth, &SsimParams::default(), true)?;
        value += lambda2 * (1.0 - s) / 2.0;
        for (out, gs) in grad.iter_mut().zip(g.unwrap()) {
            *out -= 0.5 * lambda2 * gs;
        }
    }
    Ok(LossValue { value, grad })
}
