use rand::Rng;
use serde::{Deserialize, Serialize};

/// Two-layer perceptron `out = W2·relu(W1·x + b1) + b2` with all weights in
/// one flat buffer: `[W1 (hidden×inp), b1, W2 (out×hidden), b2]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inp: usize,
    pub hidden: usize,
    pub out: usize,
    pub params: Vec<f64>,
}

/// Hidden pre-activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    pub pre: Vec<f64>,
}

impl Mlp {
    pub fn param_count(inp: usize, hidden: usize, out: usize) -> usize {
        hidden * inp + hidden + out * hidden + out
    }

    pub fn zeros(inp: usize, hidden: usize, out: usize) -> Self {
        Mlp { inp, hidden, out, params: vec![0.0; Self::param_count(inp, hidden, out)] }
    }

    /// Kaiming-uniform first layer, small positive hidden biases (so no unit
    /// starts dead) and an all-zero output layer.
    pub fn init<R: Rng>(inp: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(inp, hidden, out);
        let bound = (6.0 / inp as f64).sqrt();
        for w in &mut m.params[..hidden * inp] {
            *w = rng.random_range(-bound..bound);
        }
        let b1 = hidden * inp;
        for b in &mut m.params[b1..b1 + hidden] {
            *b = rng.random_range(0.01..0.1);
        }
        m
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inp;
        let w2 = b1 + self.hidden;
        (b1, w2, w2 + self.out * self.hidden)
    }

    pub fn forward(&self, x: &[f64], trace: &mut MlpTrace) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        trace.pre.clear();
        for j in 0..self.hidden {
            let row = &p[j * self.inp..(j + 1) * self.inp];
            trace.pre.push(p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
        (0..self.out)
            .map(|k| {
                let row = &p[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                p[b2 + k] + row.iter().zip(&trace.pre).map(|(w, h)| w * h.max(0.0)).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` (same layout as `params`)
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, x: &[f64], trace: &MlpTrace, g_out: &[f64], grad: Option<&mut [f64]>) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut g_pre = vec![0.0; self.hidden];
        for (j, g) in g_pre.iter_mut().enumerate() {
            if trace.pre[j] > 0.0 {
                *g = (0..self.out).map(|k| p[w2 + k * self.hidden + j] * g_out[k]).sum();
            }
        }
        if let Some(grad) = grad {
            for k in 0..self.out {
                grad[b2 + k] += g_out[k];
                for j in 0..self.hidden {
                    grad[w2 + k * self.hidden + j] += g_out[k] * trace.pre[j].max(0.0);
                }
            }
            for j in 0..self.hidden {
                grad[b1 + j] += g_pre[j];
                for i in 0..self.inp {
                    grad[j * self.inp + i] += g_pre[j] * x[i];
                }
            }
        }
        let mut g_x = vec![0.0; self.inp];
        for j in 0..self.hidden {
            if g_pre[j] != 0.0 {
                for i in 0..self.inp {
                    g_x[i] += p[j * self.inp + i] * g_pre[j];
                }
            }
        }
        g_x
    }

    /// Rounds every weight through `f32`, as transmitted.
    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::init(5, 8, 3, &mut rng);
        let y = m.forward(&[0.3, -1.0, 2.0, 0.1, 0.0], &mut MlpTrace::default());
        assert_eq!(y, vec![0.0; 3]);
        assert!(m.params[40..48].iter().all(|b| (0.01..0.1).contains(b)));
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::init(4, 6, 2, &mut rng);
        for v in m.params.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let x = [0.4, -0.2, 0.9, 0.05];
        let g_out = [0.7, -1.3];
        let obj = |m: &Mlp, x: &[f64]| {
            let y = m.forward(x, &mut MlpTrace::default());
            y[0] * g_out[0] + y[1] * g_out[1]
        };
        let mut trace = MlpTrace::default();
        m.forward(&x, &mut trace);
        let mut grad = vec![0.0; m.params.len()];
        let g_x = m.backward(&x, &trace, &g_out, Some(&mut grad));
        let h = 1e-6;
        for i in 0..m.params.len() {
            let mut a = m.clone();
            a.params[i] += h;
            let mut b = m.clone();
            b.params[i] -= h;
            let fd = (obj(&a, &x) - obj(&b, &x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..4 {
            let mut a = x;
            a[i] += h;
            let mut b = x;
            b[i] -= h;
            let fd = (obj(&m, &a) - obj(&m, &b)) / (2.0 * h);
            assert!((fd - g_x[i]).abs() < 1e-7);
        }
    }
}
