//! Built-in model geometries and their closed-form oracles.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::geometry::{Connection, ExactDerivatives, ManifoldModel, Oracles, Periodicity};

/// Names accepted by [`by_name`].
pub const BUILTIN_NAMES: &[&str] = &[
    "heisenberg",
    "heisenberg-nil",
    "heisenberg-twisted",
    "flat1",
    "flat2",
    "weighted-plane",
];

fn heisenberg_frame(x: &[f64], out: &mut [f64]) {
    // columns Z_1 = (1, 0, -y/2), Z_2 = (0, 1, x/2), Z_3 = (0, 0, 1)
    out[0] = 1.0;
    out[1] = 0.0;
    out[2] = 0.0;
    out[3] = 0.0;
    out[4] = 1.0;
    out[5] = 0.0;
    out[6] = -0.5 * x[1];
    out[7] = 0.5 * x[0];
    out[8] = 1.0;
}

fn heisenberg_bracket(i: usize, j: usize, _x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match (i, j) {
        (0, 1) => out[2] = 1.0,
        (1, 0) => out[2] = -1.0,
        _ => {}
    }
}

/// `x^{-1} a` in the Heisenberg group.
pub fn heisenberg_relative(x: &[f64], a: &[f64]) -> [f64; 3] {
    [
        a[0] - x[0],
        a[1] - x[1],
        a[2] - x[2] - 0.5 * (x[0] * a[1] - x[1] * a[0]),
    ]
}

/// `x · p` in the Heisenberg group.
pub fn heisenberg_mul(x: &[f64], p: &[f64]) -> [f64; 3] {
    [
        x[0] + p[0],
        x[1] + p[1],
        x[2] + p[2] + 0.5 * (x[0] * p[1] - x[1] * p[0]),
    ]
}

/// Closed-form sub-Riemannian distance on the Heisenberg group.
///
/// Geodesics from the origin project to circular arcs; for horizontal
/// displacement `r` and height `z` the arc angle `φ ∈ [0, 2π)` solves
/// `(φ - sin φ) / (8 sin²(φ/2)) = |z| / r²` and the length is `r (φ/2) / sin(φ/2)`.
pub fn heisenberg_distance(x: &[f64], a: &[f64]) -> f64 {
    let p = heisenberg_relative(x, a);
    let r = p[0].hypot(p[1]);
    let z = p[2].abs();
    if z == 0.0 {
        return r;
    }
    if r == 0.0 {
        return 2.0 * (PI * z).sqrt();
    }
    let target = z / (r * r);
    let area = |phi: f64| {
        let s = (0.5 * phi).sin();
        (phi - phi.sin()) / (8.0 * s * s)
    };
    let (mut lo, mut hi) = (0.0_f64, 2.0 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = if mid < 1e-6 { mid / 12.0 } else { area(mid) };
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let phi = 0.5 * (lo + hi);
    let half = 0.5 * phi;
    if half < 1e-8 {
        r
    } else {
        r * half / half.sin()
    }
}

/// Heat kernel of `(Z_1² + Z_2²)/2` on the Heisenberg group w.r.t. Lebesgue measure:
/// `p_t = e^{-r²/2t}/(2πt) · (1/2π) ∫ cos(λz) (λt/2)/sinh(λt/2) exp(-(r²/2t)((λt/2)coth(λt/2) - 1)) dλ`.
pub fn heisenberg_heat_kernel(t: f64, x: &[f64], a: &[f64]) -> f64 {
    let p = heisenberg_relative(x, a);
    let r2 = p[0] * p[0] + p[1] * p[1];
    let z = p[2];
    let integrand = |lam: f64| {
        let u = 0.5 * lam * t;
        let (ratio, coth_m1) = if u < 1e-4 {
            (1.0 - u * u / 6.0, u * u / 3.0)
        } else {
            (u / u.sinh(), u / u.tanh() - 1.0)
        };
        (lam * z).cos() * ratio * (-(r2 / (2.0 * t)) * coth_m1).exp()
    };
    // Integrand is even in λ and decays like u e^{-u}; truncate at u = 60.
    let upper = 120.0 / t;
    let steps = 20_000usize;
    let h = upper / steps as f64;
    let mut s = integrand(0.0) + integrand(upper);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * integrand(k as f64 * h);
    }
    let integral = 2.0 * s * h / 3.0;
    (-r2 / (2.0 * t)).exp() / (2.0 * PI * t) * integral / (2.0 * PI)
}

/// Rotation by `θ` about the vertical axis through `c`: `p ↦ c · R_θ(c^{-1} p)`.
fn heisenberg_rotation(theta: f64, c: &[f64], p: &[f64]) -> Vec<f64> {
    let q = heisenberg_relative(c, p);
    let (s, co) = theta.sin_cos();
    let rq = [co * q[0] - s * q[1], s * q[0] + co * q[1], q[2]];
    heisenberg_mul(c, &rq).to_vec()
}

fn heisenberg_builder(name: &str) -> crate::geometry::ModelBuilder {
    ManifoldModel::builder(name, 3, 2).frame(heisenberg_frame)
}

fn heisenberg_exact() -> ExactDerivatives {
    ExactDerivatives {
        brackets: Some(Arc::new(heisenberg_bracket)),
        divergence: Some(Arc::new(|_x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))),
        zero_drift_correction: true,
        constant_frame: false,
    }
}

/// Heisenberg group on `R^3`: `Z_1 = ∂_x - (y/2)∂_z`, `Z_2 = ∂_y + (x/2)∂_z`,
/// `Z_3 = ∂_z`, Lebesgue volume, `Γ ≡ 0`.
pub fn heisenberg() -> ManifoldModel {
    heisenberg_builder("heisenberg")
        .exact(heisenberg_exact())
        .oracles(Oracles {
            distance: Some(Arc::new(heisenberg_distance)),
            heat_kernel: Some(Arc::new(heisenberg_heat_kernel)),
            symmetry: Some(Arc::new(heisenberg_rotation)),
        })
        .build()
        .expect("built-in model")
}

/// The Heisenberg geometry with every closed-form derivative stripped, so
/// brackets and divergences go through finite differences.
pub fn heisenberg_without_exact() -> ManifoldModel {
    heisenberg_builder("heisenberg-fd").build().expect("built-in model")
}

/// Compact quotient of the Heisenberg group by the lattice generated by
/// `(1,0,0)`, `(0,1,0)`, `(0,0,1/2)`.
pub fn heisenberg_nil() -> ManifoldModel {
    let per = Periodicity::HeisenbergNil;
    let per2 = per.clone();
    heisenberg_builder("heisenberg-nil")
        .periodicity(per)
        .exact(heisenberg_exact())
        .oracles(Oracles {
            distance: Some(Arc::new(move |x: &[f64], a: &[f64]| {
                let ar = per2.reduce(a);
                per2.images(&ar)
                    .iter()
                    .map(|img| heisenberg_distance(&per2.reduce(x), img))
                    .fold(f64::INFINITY, f64::min)
            })),
            heat_kernel: None,
            symmetry: None,
        })
        .build()
        .expect("built-in model")
}

/// Position-dependent part of the synthetic connection.
pub fn twist_kappa(x: &[f64]) -> f64 {
    0.3 * x[0].sin()
}

/// Heisenberg frame and volume with a nonzero metric connection:
/// `Γ^1_{21} = 1 = -Γ^2_{11}` and `Γ^1_{22} = κ(x) = -Γ^2_{12}` (one-based indices).
pub fn heisenberg_twisted() -> ManifoldModel {
    heisenberg_builder("heisenberg-twisted")
        .connection(|x, g| {
            g.iter_mut().for_each(|v| *v = 0.0);
            let k = twist_kappa(x);
            let idx = |a: usize, b: usize, c: usize| (a * 3 + b) * 3 + c;
            g[idx(0, 1, 0)] = 1.0;
            g[idx(1, 0, 0)] = -1.0;
            g[idx(0, 1, 1)] = k;
            g[idx(1, 0, 1)] = -k;
        })
        .exact(ExactDerivatives {
            brackets: Some(Arc::new(heisenberg_bracket)),
            divergence: Some(Arc::new(|_x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))),
            zero_drift_correction: false,
            constant_frame: false,
        })
        .oracles(Oracles {
            distance: Some(Arc::new(heisenberg_distance)),
            heat_kernel: Some(Arc::new(heisenberg_heat_kernel)),
            symmetry: Some(Arc::new(heisenberg_rotation)),
        })
        .build()
        .expect("built-in model")
}

/// Wrapped Gaussian heat kernel of `Δ/2` on a flat torus with equal sides.
pub fn flat_heat_kernel(side: f64, t: f64, x: &[f64], a: &[f64]) -> f64 {
    x.iter()
        .zip(a)
        .map(|(xi, ai)| {
            let base = (ai - xi).rem_euclid(side);
            (-6..=6)
                .map(|k| {
                    let dd = base + k as f64 * side;
                    (-dd * dd / (2.0 * t)).exp()
                })
                .sum::<f64>()
                / (2.0 * PI * t).sqrt()
        })
        .product()
}

/// Flat `n`-torus of the given side with `Z_i = e_i` (so `d = n`).
pub fn flat_torus(n: usize, side: f64) -> ManifoldModel {
    let per = Periodicity::Torus(vec![Some(side); n]);
    let per2 = per.clone();
    ManifoldModel::builder(format!("flat{n}"), n, n)
        .frame(move |_x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                out[i * n + i] = 1.0;
            }
        })
        .periodicity(per)
        .exact(ExactDerivatives {
            brackets: Some(Arc::new(|_, _, _, out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0)
            })),
            divergence: Some(Arc::new(|_x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))),
            zero_drift_correction: true,
            constant_frame: true,
        })
        .oracles(Oracles {
            distance: Some(Arc::new(move |x: &[f64], a: &[f64]| per2.chart_distance(x, a))),
            heat_kernel: Some(Arc::new(move |t, x: &[f64], a: &[f64]| flat_heat_kernel(side, t, x, a))),
            symmetry: None,
        })
        .build()
        .expect("built-in model")
}

fn weighted_plane_builder(name: &str) -> crate::geometry::ModelBuilder {
    ManifoldModel::builder(name, 2, 2)
        .frame(|_x, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
        .vol_density(|x| x[0].exp())
}

/// Euclidean plane with volume density `e^{x^1}`, so `div Z_1 = 1`.
pub fn weighted_plane() -> ManifoldModel {
    weighted_plane_builder("weighted-plane")
        .exact(ExactDerivatives {
            brackets: None,
            divergence: Some(Arc::new(|_x, out: &mut [f64]| {
                out[0] = 1.0;
                out[1] = 0.0;
            })),
            zero_drift_correction: false,
            constant_frame: false,
        })
        .build()
        .expect("built-in model")
}

/// [`weighted_plane`] with the divergence left to finite differences.
pub fn weighted_plane_without_exact() -> ManifoldModel {
    weighted_plane_builder("weighted-plane-fd")
        .build()
        .expect("built-in model")
}

/// Looks up a built-in model; `side` overrides the flat torus side length.
pub fn by_name(name: &str, side: Option<f64>) -> Result<ManifoldModel> {
    if let Some(s) = side {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidInput(format!("side must be positive, got {s}")));
        }
    }
    Ok(match name {
        "heisenberg" => heisenberg(),
        "heisenberg-nil" => heisenberg_nil(),
        "heisenberg-twisted" => heisenberg_twisted(),
        "flat1" => flat_torus(1, side.unwrap_or(20.0)),
        "flat2" => flat_torus(2, side.unwrap_or(10.0)),
        "weighted-plane" => weighted_plane(),
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown model `{other}` (known: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    })
}

/// Builds a model from `model = <name>` and optional `side = <real>` entries.
pub fn from_config(kv: &KeyValues) -> Result<ManifoldModel> {
    let name = kv.raw("model").ok_or_else(|| Error::Config {
        line: 0,
        field: "model".into(),
        message: "missing".into(),
    })?;
    let side = kv.get::<f64>("side")?;
    by_name(name, side).map_err(|e| Error::Config {
        line: kv.line_of("model"),
        field: "model".into(),
        message: e.to_string(),
    })
}

/// A copy of `model` with `Γ ≡ 0` and the same frame and volume.
pub fn with_zero_connection(model: &ManifoldModel) -> ManifoldModel {
    model.with_connection(format!("{}-flatconn", model.name()), Connection::Zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_oracle_special_cases() {
        let o = [0.0; 3];
        assert!((heisenberg_distance(&o, &[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((heisenberg_distance(&o, &[0.0, 0.0, 1.0]) - 2.0 * PI.sqrt()).abs() < 1e-12);
        assert_eq!(heisenberg_distance(&[0.3, 0.2, 0.1], &[0.3, 0.2, 0.1]), 0.0);
        // Half circle of radius 1/2 through (1,0,0) encloses area π/8 with length π/2.
        let d = heisenberg_distance(&o, &[1.0, 0.0, PI / 8.0]);
        assert!((d - PI / 2.0).abs() < 1e-10, "{d}");
    }

    #[test]
    fn distance_is_left_invariant_and_symmetric() {
        let x = [0.4, -0.3, 0.2];
        let a = [-0.1, 0.5, 0.7];
        let g = [1.5, 2.0, -0.4];
        let d = heisenberg_distance(&x, &a);
        let d2 = heisenberg_distance(&heisenberg_mul(&g, &x), &heisenberg_mul(&g, &a));
        assert!((d - d2).abs() < 1e-12);
        assert!((d - heisenberg_distance(&a, &x)).abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_on_diagonal() {
        // p_t(0) = 1 / (4 t^2)
        for t in [0.25, 1.0, 2.0] {
            let v = heisenberg_heat_kernel(t, &[0.0; 3], &[0.0; 3]);
            assert!((v - 0.25 / (t * t)).abs() < 1e-9 * v.max(1.0), "{t} {v}");
        }
    }

    #[test]
    fn heat_kernel_scaling() {
        // p_{ε² t}(δ_ε a) = ε^{-4} p_t(a) with δ_ε(x,y,z) = (εx, εy, ε²z)
        let a = [0.5, 0.0, 0.05];
        let e: f64 = 0.5;
        let lhs = heisenberg_heat_kernel(e * e, &[0.0; 3], &[e * a[0], e * a[1], e * e * a[2]]);
        let rhs = heisenberg_heat_kernel(1.0, &[0.0; 3], &a) / e.powi(4);
        assert!((lhs / rhs - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_kernel_value() {
        let v = flat_heat_kernel(20.0, 0.25, &[0.0], &[1.0]);
        let exact = (2.0 * PI * 0.25).powf(-0.5) * (-2.0_f64).exp();
        assert!((v - exact).abs() < 1e-12);
        assert!((exact - 0.1080).abs() < 1e-4);
    }

    #[test]
    fn rotation_fixes_axis_points() {
        let c = [0.2, -0.1, 0.3];
        let on_axis = heisenberg_mul(&c, &[0.0, 0.0, 0.4]);
        let r = heisenberg_rotation(1.1, &c, &on_axis);
        for k in 0..3 {
            assert!((r[k] - on_axis[k]).abs() < 1e-14);
        }
        let p = [0.7, 0.1, -0.2];
        let rp = heisenberg_rotation(0.8, &c, &p);
        assert!((heisenberg_distance(&c, &p) - heisenberg_distance(&c, &rp)).abs() < 1e-12);
    }

    #[test]
    fn lookup_by_name() {
        for n in BUILTIN_NAMES {
            let m = by_name(n, None).unwrap();
            assert_eq!(&m.name(), n);
        }
        assert!(by_name("nope", None).is_err());
        assert!(by_name("flat1", Some(-1.0)).is_err());
        let kv = KeyValues::parse("model = flat1\nside = 5").unwrap();
        let m = from_config(&kv).unwrap();
        assert_eq!(m.chart_distance(&[0.0], &[4.0]), 1.0);
        let kv = KeyValues::parse("\nmodel = what").unwrap();
        assert!(matches!(from_config(&kv), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn nil_distance_respects_lattice() {
        let m = heisenberg_nil();
        let d = m.oracles().distance.as_ref().unwrap();
        assert!(d(&[0.0; 3], &[1.0, 0.0, 0.0]) < 1e-12);
        assert!((d(&[0.0; 3], &[0.3, 0.0, 0.0]) - 0.3).abs() < 1e-12);
    }
}
