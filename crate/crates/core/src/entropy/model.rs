use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sigmoid;

/// Widths of the per-channel cumulative network, input to output.
pub const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
/// Learnable scalars per channel: 24 matrix entries, 10 biases, 9 gates.
pub const PARAMS_PER_CHANNEL: usize = 43;
/// Floor on per-symbol likelihood inside the rate term.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;
const INIT_SCALE: f64 = 10.0;

// Offsets inside one channel's parameter block.
const H: [usize; 4] = [0, 3, 12, 21];
const B: [usize; 4] = [24, 27, 30, 33];
const A: [usize; 3] = [34, 37, 40];

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic derivative, `σ(v)·σ(−v)`, accurate in both tails.
fn sigmoid_slope(v: f64) -> f64 {
    sigmoid(v) * sigmoid(-v)
}

/// A learned monotone univariate density per channel. The cumulative logit
/// is a small network `f` whose effective weights are softplus-positive and
/// whose gates are tanh-bounded, so `f` never decreases; the CDF is `σ(f)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedEntropyModel {
    pub channels: usize,
    /// `channels × PARAMS_PER_CHANNEL`, channel-major.
    pub params: Vec<f64>,
}

/// A channel's parameters after activation.
struct Prepared {
    h: [f64; 24],
    /// Derivative of softplus at each raw matrix entry.
    dh: [f64; 24],
    b: [f64; 10],
    gate: [f64; 9],
}

#[derive(Default)]
struct Trace {
    x1: [f64; 3],
    x2: [f64; 3],
    x3: [f64; 3],
    t: [[f64; 3]; 3],
}

impl FactorizedEntropyModel {
    /// Fresh model: zero biases and gates and constant matrices, giving a
    /// logistic density centered at zero with scale `INIT_SCALE`.
    pub fn new(channels: usize) -> Self {
        let k = FILTERS.len() - 1;
        let scale = INIT_SCALE.powf(1.0 / k as f64);
        let mut block = [0.0; PARAMS_PER_CHANNEL];
        for layer in 0..k {
            let init = (1.0 / scale / FILTERS[layer + 1] as f64).exp_m1().ln();
            let n = FILTERS[layer] * FILTERS[layer + 1];
            block[H[layer]..H[layer] + n].iter_mut().for_each(|v| *v = init);
        }
        let params = (0..channels).flat_map(|_| block).collect();
        FactorizedEntropyModel { channels, params }
    }

    fn prepare(&self, channel: usize) -> Prepared {
        let p = &self.params[channel * PARAMS_PER_CHANNEL..(channel + 1) * PARAMS_PER_CHANNEL];
        let mut out = Prepared { h: [0.0; 24], dh: [0.0; 24], b: [0.0; 10], gate: [0.0; 9] };
        for i in 0..24 {
            out.h[i] = softplus(p[i]);
            out.dh[i] = sigmoid(p[i]);
        }
        out.b.copy_from_slice(&p[24..34]);
        for i in 0..9 {
            out.gate[i] = p[34 + i].tanh();
        }
        out
    }

    fn forward(c: &Prepared, x: f64, tr: &mut Trace) -> f64 {
        // Layer 0: 1 → 3.
        let mut z = [0.0; 3];
        for i in 0..3 {
            z[i] = c.h[H[0] + i] * x + c.b[i];
        }
        let gated = |z: [f64; 3], layer: usize, t: &mut [f64; 3]| {
            let mut out = [0.0; 3];
            for i in 0..3 {
                t[i] = z[i].tanh();
                out[i] = z[i] + c.gate[3 * layer + i] * t[i];
            }
            out
        };
        tr.x1 = gated(z, 0, &mut tr.t[0]);
        // Layers 1 and 2: 3 → 3.
        for layer in 1..3 {
            let input = if layer == 1 { tr.x1 } else { tr.x2 };
            let mut z = [0.0; 3];
            for i in 0..3 {
                z[i] = c.b[3 * layer + i] + (0..3).map(|j| c.h[H[layer] + 3 * i + j] * input[j]).sum::<f64>();
            }
            let mut t = [0.0; 3];
            let out = gated(z, layer, &mut t);
            tr.t[layer] = t;
            if layer == 1 {
                tr.x2 = out;
            } else {
                tr.x3 = out;
            }
        }
        // Layer 3: 3 → 1.
        c.b[9] + (0..3).map(|j| c.h[H[3] + j] * tr.x3[j]).sum::<f64>()
    }

    /// Pulls `g` (gradient on the logit) back to the input; parameter
    /// gradients for this channel are accumulated into `gp` when given.
    fn backward(c: &Prepared, x: f64, tr: &Trace, g: f64, mut gp: Option<&mut [f64]>) -> f64 {
        let mut gx = [0.0; 3];
        for j in 0..3 {
            gx[j] = g * c.h[H[3] + j];
        }
        if let Some(gp) = gp.as_deref_mut() {
            gp[B[3]] += g;
            for j in 0..3 {
                gp[H[3] + j] += g * tr.x3[j] * c.dh[H[3] + j];
            }
        }
        for layer in (0..3).rev() {
            let t = tr.t[layer];
            let mut gz = [0.0; 3];
            for i in 0..3 {
                let gate = c.gate[3 * layer + i];
                gz[i] = gx[i] * (1.0 + gate * (1.0 - t[i] * t[i]));
                if let Some(gp) = gp.as_deref_mut() {
                    gp[A[layer] + i] += gx[i] * t[i] * (1.0 - gate * gate);
                    gp[B[layer] + i] += gz[i];
                }
            }
            if layer == 0 {
                let mut g_in = 0.0;
                for i in 0..3 {
                    g_in += c.h[H[0] + i] * gz[i];
                    if let Some(gp) = gp.as_deref_mut() {
                        gp[H[0] + i] += gz[i] * x * c.dh[H[0] + i];
                    }
                }
                return g_in;
            }
            let input = if layer == 1 { tr.x1 } else { tr.x2 };
            let mut g_in = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let k = H[layer] + 3 * i + j;
                    g_in[j] += c.h[k] * gz[i];
                    if let Some(gp) = gp.as_deref_mut() {
                        gp[k] += gz[i] * input[j] * c.dh[k];
                    }
                }
            }
            gx = g_in;
        }
        unreachable!()
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::invalid(format!("channel {channel} of a {}-channel model", self.channels)));
        }
        Ok(())
    }

    /// The cumulative logit `f(x)`; the CDF is `σ(f(x))`.
    pub fn cdf_logit(&self, channel: usize, x: f64) -> Result<f64> {
        self.check_channel(channel)?;
        Ok(Self::forward(&self.prepare(channel), x, &mut Trace::default()))
    }

    /// Probability of the unit bin centered on `y`, unclamped.
    pub fn pmf_of(&self, channel: usize, y: f64) -> Result<f64> {
        self.check_channel(channel)?;
        let c = self.prepare(channel);
        let mut tr = Trace::default();
        let lo = Self::forward(&c, y - 0.5, &mut tr);
        let hi = Self::forward(&c, y + 0.5, &mut tr);
        Ok(bin_probability(lo, hi))
    }

    /// Rate of `y` in bits under the model, `−Σ log₂ max(pmf, floor)`.
    /// Element `i` uses density `channel_of(i)`. When `grad` is given, adds
    /// `scale · ∂bits/∂y` and `scale · ∂bits/∂params` into its buffers.
    pub fn rate_bits(&self, y: &[f64], channel_of: impl Fn(usize) -> usize, grad: Option<RateGrad<'_>>) -> f64 {
        let prepared: Vec<Prepared> = (0..self.channels).map(|c| self.prepare(c)).collect();
        let mut total = 0.0;
        let mut grad = grad;
        let (mut tl, mut tu) = (Trace::default(), Trace::default());
        for (i, &v) in y.iter().enumerate() {
            let ch = channel_of(i);
            let c = &prepared[ch];
            let lo = Self::forward(c, v - 0.5, &mut tl);
            let hi = Self::forward(c, v + 0.5, &mut tu);
            let p = bin_probability(lo, hi);
            if p < LIKELIHOOD_FLOOR {
                total -= LIKELIHOOD_FLOOR.log2();
                continue;
            }
            total -= p.log2();
            if let Some(g) = grad.as_mut() {
                let d_p = -g.scale / (p * std::f64::consts::LN_2);
                let g_hi = d_p * sigmoid_slope(hi);
                let g_lo = -d_p * sigmoid_slope(lo);
                let block = ch * PARAMS_PER_CHANNEL..(ch + 1) * PARAMS_PER_CHANNEL;
                let gy_hi = Self::backward(c, v + 0.5, &tu, g_hi, g.params.as_deref_mut().map(|p| &mut p[block.clone()]));
                let gy_lo = Self::backward(c, v - 0.5, &tl, g_lo, g.params.as_deref_mut().map(|p| &mut p[block]));
                if let Some(gv) = g.values.as_deref_mut() {
                    gv[i] += gy_hi + gy_lo;
                }
            }
        }
        total
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// `σ(hi) − σ(lo)`, evaluated on whichever side of the logistic keeps the
/// subtraction away from 1.
fn bin_probability(lo: f64, hi: f64) -> f64 {
    let s = if lo + hi > 0.0 { -1.0 } else { 1.0 };
    (sigmoid(s * hi) - sigmoid(s * lo)).abs()
}

/// Gradient sinks for [`FactorizedEntropyModel::rate_bits`].
pub struct RateGrad<'a> {
    pub scale: f64,
    pub values: Option<&'a mut [f64]>,
    pub params: Option<&'a mut [f64]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(channels: usize, seed: u64) -> FactorizedEntropyModel {
        let mut m = FactorizedEntropyModel::new(channels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in m.params.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        m
    }

    #[test]
    fn fresh_model_is_logistic_with_scale_ten() {
        let m = FactorizedEntropyModel::new(1);
        for x in [-30.0, -1.0, 0.0, 2.5, 17.0] {
            assert!((m.cdf_logit(0, x).unwrap() - x / 10.0).abs() < 1e-12);
        }
        assert_eq!(m.params.len(), PARAMS_PER_CHANNEL);
    }

    #[test]
    fn logit_is_monotone() {
        let m = perturbed(2, 5);
        for ch in 0..2 {
            let mut prev = f64::NEG_INFINITY;
            for i in -400..400 {
                let v = m.cdf_logit(ch, i as f64 * 0.1).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn pmf_is_cdf_difference() {
        let m = perturbed(1, 9);
        for y in [-7.0, -0.3, 0.0, 1.0, 4.2] {
            let f = |x: f64| sigmoid(m.cdf_logit(0, x).unwrap());
            let expect = f(y + 0.5) - f(y - 0.5);
            assert!((m.pmf_of(0, y).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_channel_rejected() {
        assert!(FactorizedEntropyModel::new(2).pmf_of(2, 0.0).is_err());
    }
}
