use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use srlab_core::variational::{
    connect, drift_admissibility, energy_path, malliavin_cov, rate_j, rate_j_control, sr_distance, ConnectDrift,
    DistanceOptions,
};
use srlab_core::{models, BasePath, FramePoint, PiecewiseLinearPath};

fn quick() -> DistanceOptions {
    DistanceOptions {
        n_controls: 16,
        n_starts: 4,
        seed: 3,
        ..DistanceOptions::default()
    }
}

#[test]
fn flat_distance_and_rate_function() {
    let m = models::flat_torus(1, 10.0);
    let r = sr_distance(&m, &[0.0], &[1.0], &quick()).unwrap();
    assert!((r.d_sr - 1.0).abs() < 1e-3, "{}", r.d_sr);
    let j = rate_j(&m, &r.path, &[0.0], &[1.0], 1.0).unwrap();
    assert!(j.j.abs() <= 1e-3, "{j:?}");

    // 1 + c sin(πt) with c²π²/2 = 1 costs one extra unit of energy.
    let c = 2f64.sqrt() / PI;
    let k = 4096;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let pts: Vec<f64> = times.iter().map(|&t| t + c * (PI * t).sin()).collect();
    let detour = BasePath::new(1, times, pts).unwrap();
    let j = rate_j(&m, &detour, &[0.0], &[1.0], 1.0).unwrap();
    assert!((j.j - 0.5).abs() < 1e-3, "{j:?}");

    let wrong = BasePath::straight(&[0.0], &[0.5], 8).unwrap();
    let j = rate_j(&m, &wrong, &[0.0], &[1.0], 1.0).unwrap();
    assert!(j.j.is_infinite() && j.diagnostic.is_some());
}

#[test]
fn straight_horizontal_control_has_energy_two() {
    let m = models::heisenberg();
    let h = PiecewiseLinearPath::from_fn(2, 1.0, 8, |t| vec![t, t]).unwrap();
    let d = 2f64.sqrt();
    let j = rate_j_control(&m, &h, &[0.0; 3], &[1.0, 1.0, 0.0], d, 4).unwrap();
    assert!(j.j.abs() < 1e-12 && (j.energy - 2.0).abs() < 1e-12);
    let j = rate_j_control(&m, &h, &[0.0; 3], &[1.0, 1.0, 0.1], d, 4).unwrap();
    assert!(!j.is_finite());
}

#[test]
fn heisenberg_distance_is_symmetric_and_matches_the_oracle() {
    let m = models::heisenberg();
    let x = [0.0; 3];
    let a = [0.5, 0.3, 0.2];
    let fwd = sr_distance(&m, &x, &a, &quick()).unwrap();
    let back = sr_distance(&m, &a, &x, &quick()).unwrap();
    assert!(fwd.converged && back.converged);
    assert!(
        (fwd.d_sr - back.d_sr).abs() <= 0.02 * fwd.d_sr,
        "{} {}",
        fwd.d_sr,
        back.d_sr
    );
    let exact = models::heisenberg_distance(&x, &a);
    assert!((fwd.d_sr - exact).abs() <= 0.01 * exact, "{} vs {exact}", fwd.d_sr);
    // The minimizer is a horizontal path of the reported energy.
    let pe = energy_path(&m, &fwd.path, 1e-3).unwrap();
    assert!((pe.energy - fwd.energy).abs() <= 1e-3 * fwd.energy);
    let j = rate_j(&m, &fwd.path, &x, &a, exact).unwrap();
    assert!(j.j >= -1e-3 && j.j <= 1e-2, "{j:?}");
}

#[test]
fn triangle_inequality_holds() {
    let m = models::heisenberg();
    let p = [[0.0, 0.0, 0.0], [0.4, -0.2, 0.1], [0.1, 0.5, -0.15]];
    let d = |i: usize, j: usize| sr_distance(&m, &p[i], &p[j], &quick()).unwrap().d_sr;
    let (ab, bc, ac) = (d(0, 1), d(1, 2), d(0, 2));
    assert!(ac <= (ab + bc) * 1.01, "{ac} > {ab} + {bc}");
}

#[test]
fn distance_to_self_is_zero() {
    let m = models::heisenberg_twisted();
    let r = sr_distance(&m, &[0.3, 0.2, 0.1], &[0.3, 0.2, 0.1], &quick()).unwrap();
    assert!(r.d_sr <= 1e-6 && r.starts[0].feasible);
}

#[test]
fn connect_reaches_a_vertical_target_with_and_without_drift() {
    let m = models::heisenberg();
    let a = [0.0, 0.0, 0.2];
    let c = connect(&m, &[0.0; 3], &a, None, &quick()).unwrap();
    assert!(c.endpoint_error <= 1e-4);
    assert!(m.chart_distance(c.path.end(), &a) <= 1e-4);

    let z3 = ConnectDrift {
        field: Arc::new(|_x: &[f64], v: &mut [f64]| {
            v[0] = 0.0;
            v[1] = 0.0;
            v[2] = 1.0;
        }),
        tau: 1.0,
    };
    let c = connect(&m, &[0.0; 3], &a, Some(&z3), &quick()).unwrap();
    assert!(c.endpoint_error <= 1e-4);
    assert!(m.chart_distance(c.path.end(), &a) <= 1e-4);
    assert!(drift_admissibility(&m, &c.path, &z3.field, 1.0).unwrap() < 1e-2);
}

#[test]
fn flat_malliavin_covariance_is_time_times_identity() {
    let m = models::flat_torus(2, 10.0);
    let u0 = FramePoint::rotated(&m, &[0.1, 0.2], 0.7).unwrap();
    let h = PiecewiseLinearPath::from_fn(2, 1.0, 8, |t| vec![t.sin(), -t]).unwrap();
    let r = malliavin_cov(&m, &u0, &h, 0.5, 4).unwrap();
    for (k, g) in r.gamma.iter().enumerate() {
        let want = if k % 3 == 0 { 0.5 } else { 0.0 };
        assert!((g - want).abs() < 1e-9, "{:?}", r.gamma);
    }
}

#[test]
fn heisenberg_malliavin_covariance_degenerates_only_on_the_zero_control() {
    let m = models::heisenberg();
    let u0 = FramePoint::identity(&m, &[0.0; 3]).unwrap();
    let zero = malliavin_cov(&m, &u0, &PiecewiseLinearPath::zeros(2, 1.0, 8), 1.0, 4).unwrap();
    assert!(zero.det.abs() <= 1e-10, "{zero:?}");
    let h = PiecewiseLinearPath::from_fn(2, 1.0, 8, |t| vec![t, 0.0]).unwrap();
    let r = malliavin_cov(&m, &u0, &h, 1.0, 4).unwrap();
    assert!(r.det > 1e-3 && r.min_eigenvalue > 0.0, "{r:?}");
    assert!(malliavin_cov(&m, &u0, &h, 1.5, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn malliavin_covariance_is_positive_semidefinite(raw in prop::collection::vec(-0.5..0.5_f64, 16), t in 0.1..1.0_f64) {
        let m = models::heisenberg_twisted();
        let u0 = FramePoint::rotated(&m, &[0.2, -0.1, 0.3], 0.5).unwrap();
        let h = PiecewiseLinearPath::from_increments(2, 1.0, &raw).unwrap();
        let r = malliavin_cov(&m, &u0, &h, t, 16).unwrap();
        prop_assert!(r.min_eigenvalue >= -1e-10, "{:?}", r);
        prop_assert!(r.asymmetry <= 1e-8);
        prop_assert!(r.jk_residual <= 1e-6);
    }
}
