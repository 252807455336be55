use std::ops::Mul;

use nalgebra::Matrix3;

/// Quaternion in (w, x, y, z) order. Rotations use unit quaternions; the
/// un-normalized form shows up as raw network output and as gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };
    pub const ZERO: Quat = Quat { w: 0.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn conj(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Quat) -> Self {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Quat) -> Self {
        Quat::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Returns `None` for a zero (or non-finite) quaternion.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self.scale(1.0 / n))
        } else {
            None
        }
    }

    /// Rotation angle in [0, π] of the rotation this unit quaternion encodes.
    pub fn angle(self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }

    /// Rotation matrix of `self / |self|`.
    pub fn to_rotation_matrix(self) -> Matrix3<f64> {
        let q = self.normalized().unwrap_or(Quat::IDENTITY);
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Pulls a gradient on the rotation matrix back to the stored (possibly
    /// non-unit) quaternion, including the normalization step.
    pub fn rotation_matrix_backward(self, grad_r: &Matrix3<f64>) -> Quat {
        let n = self.norm();
        let q = self.scale(1.0 / n);
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        let g = grad_r;
        let gw = 2.0
            * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
                + x * g[(2, 1)]);
        let gx = 2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - w * g[(1, 2)])
            + 2.0 * (z * g[(2, 0)] + w * g[(2, 1)])
            - 4.0 * x * (g[(1, 1)] + g[(2, 2)]);
        let gy = 2.0 * (x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)])
            + 2.0 * (-w * g[(2, 0)] + z * g[(2, 1)])
            - 4.0 * y * (g[(0, 0)] + g[(2, 2)]);
        let gz = 2.0 * (-w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] + y * g[(1, 2)])
            + 2.0 * (x * g[(2, 0)] + y * g[(2, 1)])
            - 4.0 * z * (g[(0, 0)] + g[(1, 1)]);
        normalize_backward(self, Quat::new(gw, gx, gy, gz))
    }
}

/// Hamilton product.
impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

/// Gradient of `v / |v|` pulled back to `v`.
pub fn normalize_backward(v: Quat, grad_out: Quat) -> Quat {
    let n = v.norm();
    let u = v.scale(1.0 / n);
    grad_out.sub(u.scale(u.dot(grad_out))).scale(1.0 / n)
}

/// Gradients of `a ⊗ b` with respect to `a` and `b`.
pub fn mul_backward(a: Quat, b: Quat, grad_out: Quat) -> (Quat, Quat) {
    (grad_out * b.conj(), a.conj() * grad_out)
}
