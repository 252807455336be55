use std::f64::consts::FRAC_PI_4;

use nalgebra::Matrix3;
use proptest::prelude::*;

use splatcodec::compensation::{
    clone_cap, clone_rng, plan_clones, prune_low_opacity, select_gradient_clones, select_motion_clones, spawn_compensated,
    CloneKind, CompensatedSet, GradientStats,
};
use splatcodec::model::{logit, GaussianPrimitive, Quat, Vec3};
use splatcodec::motion::MotionSample;

fn source() -> GaussianPrimitive {
    GaussianPrimitive {
        center: Vec3::new(0.3, -0.2, 1.1),
        rotation: Quat::from_axis_angle([0.4, -0.7, 0.2], 0.9),
        log_scale: Vec3::new(-1.0, -2.0, -1.5),
        opacity_logit: logit(0.6),
        sh: vec![0.2; 12],
    }
}

#[test]
fn clone_centers_follow_doubled_covariance() {
    let g = source();
    let sigma = g.covariance().unwrap();
    let n = 100_000;
    let mut rng = clone_rng(11, 2, 0);
    let pts: Vec<Vec3> = (0..n).map(|_| spawn_compensated(&g, CloneKind::Gradient, &mut rng)[0].center).collect();
    let mean = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
    for k in 0..3 {
        let sd = (2.0 * sigma[(k, k)]).sqrt();
        assert!((mean[k] - g.center[k]).abs() <= 3.0 * sd / (n as f64).sqrt(), "axis {k}");
    }
    let cov = pts.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    }) / (n - 1) as f64;
    let want = sigma * 2.0;
    assert!((cov - want).norm() <= 0.05 * want.norm(), "{cov} vs {want}");
}

#[test]
fn clones_copy_everything_but_position() {
    let g = source();
    let mut rng = clone_rng(1, 5, 3);
    let c = &spawn_compensated(&g, CloneKind::Gradient, &mut rng)[0];
    assert_eq!((c.rotation, c.log_scale, c.opacity_logit, &c.sh), (g.rotation, g.log_scale, g.opacity_logit, &g.sh));
    assert_ne!(c.center, g.center);
    for m in spawn_compensated(&g, CloneKind::Motion, &mut rng) {
        let ratio = (m.log_scale - g.log_scale).map(f64::exp);
        for k in 0..3 {
            assert!((ratio[k] - 0.01).abs() < 1e-12);
        }
        assert_eq!(m.sh, g.sh);
    }
}

#[test]
fn selection_examples() {
    assert_eq!(select_gradient_clones(&[2e-4, 1e-4, 5e-5, 3e-4], 1e-4), vec![0, 3]);
    let m = |dx: f64, angle: f64| MotionSample {
        delta_mu: Vec3::new(dx, 0.0, 0.0),
        delta_q: Quat::from_axis_angle([0.0, 1.0, 0.0], angle).sub(Quat::IDENTITY),
    };
    let motions = [m(0.09, 0.0), m(0.0, 1.0), m(0.07, 0.7), m(0.2, 0.0)];
    let scales = [Vec3::repeat(0.0), Vec3::new(-2.0, 0.5, -2.0), Vec3::repeat(0.0), Vec3::repeat(-0.5)];
    assert_eq!(select_motion_clones(&motions, &scales, 0.08, FRAC_PI_4, -0.01), vec![0, 1]);
}

#[test]
fn gradient_statistic_averages_visible_views() {
    let mut s = GradientStats::new(3);
    s.record(0, [3.0, 4.0]);
    s.record(0, [0.0, 1.0]);
    s.record(2, [1e-3, 0.0]);
    assert_eq!(s.averages(), vec![3.0, 0.0, 1e-3]);
}

#[test]
fn budget_examples() {
    assert_eq!(clone_cap(8, 0.05), 1);
    assert_eq!(clone_cap(40, 0.05), 2);
    assert_eq!(clone_cap(41, 0.05), 3);
    let stats = [0.3, 0.1, 0.2];
    // The motion candidate costs two and does not fit a budget of one.
    assert_eq!(plan_clones(&stats, &[1, 2], &[0], 1), vec![(2, CloneKind::Gradient)]);
    assert_eq!(plan_clones(&stats, &[1, 2], &[0], 3), vec![(0, CloneKind::Motion), (2, CloneKind::Gradient)]);
}

#[test]
fn prune_keeps_order_and_provenance() {
    let mut prims = Vec::new();
    for a in [0.5, 0.001, 0.02, 0.0099, 0.9] {
        let mut g = source();
        g.opacity_logit = logit(a);
        prims.push(g);
    }
    let provenance = vec![CloneKind::Gradient, CloneKind::Motion, CloneKind::Motion, CloneKind::Gradient, CloneKind::Motion];
    let out = prune_low_opacity(CompensatedSet { primitives: prims, provenance }, 0.01);
    let alphas: Vec<f64> = out.primitives.iter().map(|g| g.opacity()).collect();
    assert_eq!(alphas.len(), 3);
    for (a, b) in alphas.iter().zip([0.5, 0.02, 0.9]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(out.provenance, vec![CloneKind::Gradient, CloneKind::Motion, CloneKind::Motion]);
}

proptest! {
    #[test]
    fn plan_never_exceeds_budget(
        stats in proptest::collection::vec(0.0f64..1.0, 1..40),
        cap in 0usize..6,
        mask in any::<u64>(),
    ) {
        let n = stats.len();
        let gradient: Vec<usize> = (0..n).filter(|i| mask >> (i % 64) & 1 == 1).collect();
        let motion: Vec<usize> = (0..n).filter(|i| mask >> ((i + 17) % 64) & 3 == 3).collect();
        let plan = plan_clones(&stats, &gradient, &motion, cap);
        let used: usize = plan.iter().map(|(_, k)| k.copies()).sum();
        prop_assert!(used <= cap);
        for &(i, k) in &plan {
            prop_assert_eq!(k == CloneKind::Motion, motion.contains(&i));
            prop_assert!(gradient.contains(&i) || motion.contains(&i));
        }
        prop_assert!(plan.windows(2).all(|w| w[0].0 < w[1].0));
    }
}
