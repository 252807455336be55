use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use proptest::prelude::*;

use splatcodec::model::{compose_rotation, covariance_of, eval_sh, num_basis, num_coeffs, Quat, Vec3, SH_C0};

fn axis_angle() -> impl Strategy<Value = Quat> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -PI..PI)
        .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z, a)| Quat::from_axis_angle([x, y, z], a))
}

/// Rodrigues' formula, independent of the quaternion path.
fn rodrigues(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let k = Vector3::from(axis).normalize();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

#[test]
fn covariance_examples() {
    let s = Vec3::new(0.5f64.ln(), 2f64.ln(), 0.0);
    let c = covariance_of(Quat::IDENTITY, s).unwrap();
    assert!((c - Matrix3::from_diagonal(&Vector3::new(0.25, 4.0, 1.0))).norm() < 1e-12);
    // A quarter turn about z swaps the x and y variances.
    let c = covariance_of(Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2), s).unwrap();
    assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 0.25, 1.0))).norm() < 1e-12);
    assert!(covariance_of(Quat::IDENTITY, Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
}

#[test]
fn degree_one_examples() {
    let mut sh = vec![0.0; num_coeffs(1)];
    sh[0] = 0.2 / SH_C0;
    assert!((eval_sh(&sh, 1, &Vector3::new(0.3, 0.4, 0.5).normalize()).unwrap()[0] - 0.7).abs() < 1e-12);
    // Channel 1 on the z-aligned basis function.
    let mut sh = vec![0.0; num_coeffs(1)];
    sh[2 * 3 + 1] = 0.2;
    let up = eval_sh(&sh, 1, &Vector3::z()).unwrap();
    let down = eval_sh(&sh, 1, &-Vector3::z()).unwrap();
    assert!((up[1] - 0.5 - (0.5 - down[1])).abs() < 1e-12);
    assert!((up[1] - 0.5 - 0.2 * 0.488_602_511_902_919_9).abs() < 1e-12);
    assert_eq!((up[0], up[2]), (0.5, 0.5));
    let mut big = vec![0.0; num_coeffs(1)];
    big[0] = 10.0;
    assert_eq!(eval_sh(&big, 1, &Vector3::x()).unwrap(), [1.0, 0.5, 0.5]);
}

/// Basis functions read back through small single-coefficient inputs are
/// orthonormal over the sphere (Fibonacci lattice quadrature).
#[test]
fn basis_is_orthonormal_to_degree_three() {
    let nb = num_basis(3);
    let n = 40_000;
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut gram = vec![0.0; nb * nb];
    let mut y = vec![0.0; nb];
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let d = Vector3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
        for (k, yk) in y.iter_mut().enumerate() {
            let mut sh = vec![0.0; num_coeffs(3)];
            sh[k * 3] = 0.1;
            *yk = (eval_sh(&sh, 3, &d).unwrap()[0] - 0.5) / 0.1;
        }
        for a in 0..nb {
            for b in 0..nb {
                gram[a * nb + b] += y[a] * y[b] * 4.0 * PI / n as f64;
            }
        }
    }
    for a in 0..nb {
        for b in 0..nb {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((gram[a * nb + b] - want).abs() < 2e-3, "({a}, {b}) = {}", gram[a * nb + b]);
        }
    }
}

proptest! {
    #[test]
    fn covariance_is_spd_with_scale_eigenvalues(q in axis_angle(), s in proptest::array::uniform3(-4.0f64..1.0)) {
        let c = covariance_of(q, Vec3::from(s)).unwrap();
        prop_assert_eq!(c, c.transpose());
        let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
        let mut want: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
        ev.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&want) {
            prop_assert!(*a > 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
        let det: f64 = want.iter().product();
        prop_assert!((c.determinant() - det).abs() <= 1e-9 * det.max(1e-6));
    }

    #[test]
    fn rotation_matrix_matches_rodrigues(axis in proptest::array::uniform3(-1.0f64..1.0), angle in -PI..PI) {
        prop_assume!(Vector3::from(axis).norm() > 1e-3);
        let r = Quat::from_axis_angle(axis, angle).to_rotation_matrix();
        prop_assert!((r - rodrigues(axis, angle)).norm() < 1e-12);
    }

    #[test]
    fn composition_is_associative_and_matches_matrices(a in axis_angle(), b in axis_angle(), c in axis_angle()) {
        let left = compose_rotation(compose_rotation(a, b).unwrap(), c).unwrap();
        let right = compose_rotation(a, compose_rotation(b, c).unwrap()).unwrap();
        prop_assert!(left.dot(right).abs() > 1.0 - 1e-12);
        let m = a.to_rotation_matrix() * b.to_rotation_matrix();
        prop_assert!((compose_rotation(a, b).unwrap().to_rotation_matrix() - m).norm() < 1e-12);
        prop_assert!((compose_rotation(Quat::IDENTITY, c).unwrap().dot(c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sh_is_linear_in_coefficients(
        a in proptest::collection::vec(-0.1f64..0.1, 12),
        b in proptest::collection::vec(-0.1f64..0.1, 12),
        t in 0.0f64..1.0,
        d in proptest::array::uniform3(-1.0f64..1.0),
    ) {
        let d = Vector3::from(d);
        prop_assume!(d.norm() > 1e-3);
        let d = d.normalize();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y).collect();
        let (ea, eb, em) = (eval_sh(&a, 1, &d).unwrap(), eval_sh(&b, 1, &d).unwrap(), eval_sh(&mix, 1, &d).unwrap());
        for c in 0..3 {
            prop_assert!((em[c] - ((1.0 - t) * ea[c] + t * eb[c])).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_delta_rotation_rejected() {
    assert!(compose_rotation(Quat::ZERO, Quat::IDENTITY).is_err());
    let q = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
    let half = compose_rotation(q, q).unwrap();
    assert!(half.dot(Quat::from_axis_angle([0.0, 0.0, 1.0], PI)).abs() > 1.0 - 1e-15);
}
