//! Trainable parameter storage, the adaptive-moment optimizer shared by all
//! training stages, and a central-difference gradient checker.
//!
//! Backward passes are written by hand next to each forward kernel
//! (renderer, motion field, entropy model). Every one of them is verified
//! against [`finite_diff_check`].

use crate::error::{Error, Result};

/// How values are constrained after an optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Plain,
    /// Consecutive groups of four values are unit quaternions.
    Quaternions,
}

#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub shape: Vec<usize>,
    pub learnable: bool,
    pub lr: f64,
    pub kind: ParamKind,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, values: Vec<f64>, shape: Vec<usize>, lr: f64) -> Self {
        assert_eq!(values.len(), shape.iter().product::<usize>(), "shape/value mismatch");
        ParamTensor {
            name: name.into(),
            grad: vec![0.0; values.len()],
            values,
            shape,
            learnable: true,
            lr,
            kind: ParamKind::Plain,
        }
    }

    pub fn quaternions(name: impl Into<String>, values: Vec<f64>, lr: f64) -> Self {
        let n = values.len() / 4;
        let mut t = ParamTensor::new(name, values, vec![n, 4], lr);
        t.kind = ParamKind::Quaternions;
        t
    }

    pub fn frozen(mut self) -> Self {
        self.learnable = false;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn renormalize(&mut self) {
        if self.kind == ParamKind::Quaternions {
            for q in self.values.chunks_exact_mut(4) {
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    q.iter_mut().for_each(|v| *v /= n);
                } else {
                    q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
                }
            }
        }
    }
}

pub fn zero_grads(params: &mut [ParamTensor]) {
    params.iter_mut().for_each(ParamTensor::zero_grad);
}

/// Adam with bias correction. Moments are keyed by tensor position, so the
/// parameter list must keep its layout between steps.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [ParamTensor]) -> Result<()> {
        for p in params.iter().filter(|p| p.learnable) {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite gradient in `{}`[{i}]", p.name)));
            }
        }
        if self.moments.len() != params.len() {
            self.moments = params.iter().map(|p| (vec![0.0; p.len()], vec![0.0; p.len()])).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if !p.learnable {
                continue;
            }
            if m.len() != p.len() {
                return Err(Error::DimensionMismatch(format!("optimizer state for `{}`", p.name)));
            }
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.values[i] -= p.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.renormalize();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// (tensor, index, analytic, central difference) at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients with central differences.
///
/// `loss_fn` evaluates the loss and accumulates analytic gradients into the
/// parameters' `grad` buffers. At most `max_per_tensor` evenly spaced
/// coordinates of each learnable tensor are checked (all when `None`).
/// Relative error is `|analytic − numeric| / max(1e-8, |numeric|)`.
pub fn finite_diff_check<F>(
    params: &mut [ParamTensor],
    epsilon: f64,
    max_per_tensor: Option<usize>,
    mut loss_fn: F,
) -> Result<FdReport>
where
    F: FnMut(&mut [ParamTensor]) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    zero_grads(params);
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at unperturbed parameters".into()));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.clone()).collect();

    let mut report = FdReport::default();
    for t in 0..params.len() {
        if !params[t].learnable || params[t].is_empty() {
            continue;
        }
        let n = params[t].len();
        let count = max_per_tensor.map_or(n, |k| k.min(n));
        for j in 0..count {
            let i = if count == n { j } else { j * n / count };
            let orig = params[t].values[i];
            params[t].values[i] = orig + epsilon;
            let plus = loss_fn(params)?;
            params[t].values[i] = orig - epsilon;
            let minus = loss_fn(params)?;
            params[t].values[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss when perturbing `{}`[{i}]", params[t].name)));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((params[t].name.clone(), i, a, numeric));
            }
        }
    }
    zero_grads(params);
    for (p, g) in params.iter_mut().zip(analytic) {
        p.grad = g;
    }
    Ok(report)
}
