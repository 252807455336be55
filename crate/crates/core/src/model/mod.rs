//! Gaussian primitives, frame sets, cameras and the geometric algebra shared
//! by the renderer, the motion field and the codec.

mod camera;
mod quat;
mod raw;
pub mod sh;

use nalgebra::{Matrix3, Vector3};

pub use camera::Camera;
pub use quat::{mul_backward, normalize_backward, Quat};
pub use raw::{read_raw_frame, write_raw_frame};
pub use sh::{eval_sh, num_basis, num_coeffs, SH_C0};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Default SH degree at desk scale.
pub const DEFAULT_SH_DEGREE: usize = 1;

/// Scalars per primitive outside the SH block: center, rotation, log-scale, opacity logit.
pub const GEOMETRY_FLOATS: usize = 11;

/// One anisotropic Gaussian splat.
///
/// Scale is stored as a log and activated with `exp`; opacity is stored as a
/// logit and activated with the logistic function.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh::degree_for_len(self.sh.len())
    }

    pub fn covariance(&self) -> Result<Mat3> {
        covariance_of(self.rotation, self.log_scale)
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|v| v.is_finite())
    }

    /// Center, rotation, log-scale and opacity logit in storage order.
    pub fn geometry(&self) -> [f64; GEOMETRY_FLOATS] {
        let q = self.rotation;
        [
            self.center.x,
            self.center.y,
            self.center.z,
            q.w,
            q.x,
            q.y,
            q.z,
            self.log_scale.x,
            self.log_scale.y,
            self.log_scale.z,
            self.opacity_logit,
        ]
    }

    pub fn from_geometry(g: &[f64], sh: Vec<f64>) -> Self {
        GaussianPrimitive {
            center: Vec3::new(g[0], g[1], g[2]),
            rotation: Quat::new(g[3], g[4], g[5], g[6]),
            log_scale: Vec3::new(g[7], g[8], g[9]),
            opacity_logit: g[10],
            sh,
        }
    }
}

/// Ordered collection of primitives making up one frame.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianFrameSet {
    pub primitives: Vec<GaussianPrimitive>,
    pub frame_index: u32,
}

impl GaussianFrameSet {
    pub fn new(primitives: Vec<GaussianPrimitive>, frame_index: u32) -> Self {
        GaussianFrameSet { primitives, frame_index }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Axis-aligned bounds of the primitive centers.
    pub fn center_bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.primitives.iter();
        let first = it.next()?.center;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(&p.center), hi.sup(&p.center))))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Σ = R·diag(exp(s))²·Rᵀ.
pub fn covariance_of(rotation: Quat, log_scale: Vec3) -> Result<Mat3> {
    if !rotation.is_finite() || !log_scale.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("covariance inputs".into()));
    }
    let scale2 = log_scale.map(|s| (2.0 * s).exp());
    if !scale2.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("activated scale".into()));
    }
    let r = rotation.to_rotation_matrix();
    let cov = r * Mat3::from_diagonal(&scale2) * r.transpose();
    Ok(0.5 * (cov + cov.transpose()))
}

/// `normalize(delta ⊗ base)`: the delta rotation is applied on the left.
pub fn compose_rotation(delta: Quat, base: Quat) -> Result<Quat> {
    if delta.normalized().is_none() {
        return Err(Error::invalid("zero-norm delta rotation"));
    }
    (delta * base)
        .normalized()
        .ok_or_else(|| Error::NonFinite("composed rotation".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2, PI};

    #[test]
    fn identity_covariance() {
        let c = covariance_of(Quat::IDENTITY, Vec3::zeros()).unwrap();
        assert_eq!(c, Mat3::identity());
    }

    #[test]
    fn rotated_covariance_swaps_axes() {
        let q = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let c = covariance_of(q, Vec3::new(LN_2, 0.0, 0.0)).unwrap();
        // Dense product oracle: R diag(4,1,1) Rᵀ with R the quarter turn.
        let r = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let oracle = r * Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)) * r.transpose();
        assert!((c - oracle).abs().max() < 1e-12);
        assert!((c - Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_rejects_non_finite() {
        assert!(covariance_of(Quat::IDENTITY, Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(covariance_of(Quat::new(f64::INFINITY, 0.0, 0.0, 0.0), Vec3::zeros()).is_err());
    }

    #[test]
    fn compose_identity_and_quarter_turns() {
        let base = Quat::new(0.3, -0.2, 0.5, 0.1).normalized().unwrap();
        let same = compose_rotation(Quat::IDENTITY, base).unwrap();
        assert!((same.sub(base)).norm() < 1e-15);

        let qz = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let half = compose_rotation(qz, qz).unwrap();
        let oracle = Quat::from_axis_angle([0.0, 0.0, 1.0], PI);
        assert!(half.sub(oracle).norm() < 1e-12);
    }

    #[test]
    fn compose_rejects_zero_delta() {
        assert!(compose_rotation(Quat::ZERO, Quat::IDENTITY).is_err());
    }

    fn quat_strategy() -> impl Strategy<Value = Quat> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
            .prop_map(|a| Quat::from_array(a).normalized().unwrap())
    }

    proptest! {
        #[test]
        fn covariance_is_spd_with_expected_determinant(
            q in quat_strategy(),
            s in prop::array::uniform3(-3.0f64..1.5),
        ) {
            let s = Vec3::from(s);
            let c = covariance_of(q, s).unwrap();
            prop_assert!((c - c.transpose()).abs().max() < 1e-12);
            let eig = c.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
            let det: f64 = eig.eigenvalues.iter().product();
            let expect = (2.0 * s.sum()).exp();
            prop_assert!((det - expect).abs() <= 1e-9 * expect);
        }

        #[test]
        fn compose_is_unit_and_associative(
            a in quat_strategy(), b in quat_strategy(), c in quat_strategy(),
        ) {
            let ab_c = compose_rotation(compose_rotation(a, b).unwrap(), c).unwrap();
            let a_bc = compose_rotation(a, compose_rotation(b, c).unwrap()).unwrap();
            prop_assert!((ab_c.norm() - 1.0).abs() < 1e-9);
            prop_assert!(ab_c.sub(a_bc).norm() < 1e-9);
        }
    }
}
