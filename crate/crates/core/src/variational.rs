//! Energy, sub-Riemannian distance by optimal control, the rate function `J`,
//! controllability, and the deterministic Malliavin covariance.
//!
//! Controls are piecewise-constant velocities `θ_s ∈ R^d` on `S` equal
//! segments of `[0, 1]`, so `‖h‖² = Σ_s |θ_s|² / S`. The endpoint map
//! `θ ↦ π(ψ(h)_1)` is differentiated by central differences, re-integrating
//! only from the perturbed segment onward.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame_bundle::{self, develop, Drift, Engine, FramePoint, ADMISSIBILITY_TOL};
use crate::geometry::{euclid, ManifoldModel, VectorField};
use crate::optim::{bfgs, BfgsOptions};
use crate::paths::{BasePath, CameronMartinPath, PiecewiseLinearPath};
use crate::stochastics::stream_rng;

/// Endpoint tolerance in chart norm.
pub const ENDPOINT_TOL: f64 = 1e-4;

/// `‖h‖²_H = Σ |Δh|² / Δt`.
pub fn energy(h: &CameronMartinPath) -> f64 {
    h.energy()
}

/// Energy of a base path, with its admissibility diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnergy {
    /// `+∞` when the path is not admissible.
    pub energy: f64,
    pub admissible: bool,
    pub worst_ratio: f64,
    pub worst_segment: usize,
}

/// `Σ |γ'|²_g Δt` from the frame coordinates of each chord. A segment whose
/// transverse/speed ratio exceeds `tol` makes the energy infinite.
pub fn energy_path(model: &ManifoldModel, gamma: &BasePath, tol: f64) -> Result<PathEnergy> {
    let n = model.dim_n();
    let d = model.dim_d();
    let (coeffs, worst_ratio, worst_segment) = frame_bundle::chord_coefficients(model, gamma)?;
    let admissible = worst_ratio <= tol;
    let energy = if admissible {
        let t = gamma.times();
        coeffs
            .chunks(n)
            .enumerate()
            .map(|(j, c)| (t[j + 1] - t[j]) * c[..d].iter().map(|v| v * v).sum::<f64>())
            .sum()
    } else {
        f64::INFINITY
    };
    Ok(PathEnergy {
        energy,
        admissible,
        worst_ratio,
        worst_segment,
    })
}

/// Piecewise-constant controls to a piecewise-linear `h` on `[0, 1]`.
pub fn control_path(theta: &[f64], d: usize) -> Result<CameronMartinPath> {
    let s = theta.len() / d;
    let incs: Vec<f64> = theta.iter().map(|v| v / s as f64).collect();
    PiecewiseLinearPath::from_increments(d, 1.0, &incs)
}

/// The endpoint map `θ ↦ π(ψ(h)_1)` from a fixed frame point.
struct EndpointMap<'a> {
    model: &'a ManifoldModel,
    u0: &'a FramePoint,
    drift: Option<&'a Drift>,
    segments: usize,
    substeps: usize,
}

impl EndpointMap<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.model.dim_n(), self.model.dim_d())
    }

    fn increments(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|v| v / self.segments as f64).collect()
    }

    fn endpoint(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (n, d) = self.dims();
        let mut eng = Engine::new(self.model, self.drift);
        eng.set_state(self.u0);
        let dt = 1.0 / self.segments as f64;
        eng.run(&self.increments(theta), d, dt, self.substeps, 0.0, |_, _| {})?;
        Ok(eng.y[..n].to_vec())
    }

    /// Endpoint and its `n x (S d)` Jacobian (row-major) by central differences.
    fn jacobian(&self, theta: &[f64], step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, d) = self.dims();
        let p = theta.len();
        let s_count = self.segments;
        let dt = 1.0 / s_count as f64;
        let incs = self.increments(theta);
        let mut eng = Engine::new(self.model, self.drift);
        eng.set_state(self.u0);
        let full = eng.y.len();
        let mut states = Vec::with_capacity((s_count + 1) * full);
        states.extend_from_slice(&eng.y);
        eng.run(&incs, d, dt, self.substeps, 0.0, |_, y| states.extend_from_slice(y))?;
        let end = eng.y[..n].to_vec();
        let mut jac = vec![0.0; n * p];
        let mut tail = Vec::with_capacity(incs.len());
        let mut ends = vec![0.0; 2 * n];
        for seg in 0..s_count {
            for i in 0..d {
                let col = seg * d + i;
                for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                    tail.clear();
                    tail.extend_from_slice(&incs[seg * d..]);
                    tail[i] += sign * step * dt;
                    eng.y.copy_from_slice(&states[seg * full..(seg + 1) * full]);
                    eng.run(&tail, d, dt, self.substeps, seg as f64 * dt, |_, _| {})?;
                    ends[slot * n..(slot + 1) * n].copy_from_slice(&eng.y[..n]);
                }
                for r in 0..n {
                    jac[r * p + col] = (ends[r] - ends[n + r]) / (2.0 * step);
                }
            }
        }
        Ok((end, jac))
    }
}

/// Settings for [`sr_distance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceOptions {
    /// Piecewise-constant control segments `S`.
    pub n_controls: usize,
    pub n_starts: usize,
    /// Quadratic-penalty weights, applied in order before the augmented Lagrangian polish.
    pub penalties: Vec<f64>,
    /// BFGS iterations per stage.
    pub max_iter: usize,
    /// Augmented Lagrangian multiplier updates.
    pub max_outer: usize,
    pub tol: f64,
    /// 4-stage steps per control segment.
    pub substeps: usize,
    pub seed: u64,
    /// Lattice translates of the target tried on periodic models (nearest first).
    pub image_limit: usize,
    /// Output path resolution: control segments are split this many times.
    pub path_refine: usize,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            n_controls: 32,
            n_starts: 16,
            penalties: vec![1e2, 1e3, 1e4],
            max_iter: 400,
            max_outer: 30,
            tol: ENDPOINT_TOL,
            substeps: 2,
            seed: 0,
            image_limit: 9,
            path_refine: 32,
        }
    }
}

impl DistanceOptions {
    fn check(&self) -> Result<()> {
        if self.n_controls == 0 || self.n_starts == 0 || self.substeps == 0 || self.image_limit == 0 {
            return Err(Error::InvalidInput(
                "n_controls, n_starts, substeps and image_limit must be positive".into(),
            ));
        }
        if self.penalties.is_empty() || self.penalties.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidInput(
                "penalty schedule must be non-empty and positive".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("endpoint tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one multi-start run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartOutcome {
    pub start: usize,
    pub energy: f64,
    pub violation: f64,
    pub feasible: bool,
    /// BFGS iterations over all stages.
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceResult {
    pub d_sr: f64,
    /// Minimal energy `‖h*‖²`.
    pub energy: f64,
    pub h_star: CameronMartinPath,
    /// Developed minimizer at `path_refine` points per control segment.
    pub path: BasePath,
    pub converged: bool,
    pub constraint_violation: f64,
    /// Lattice translate of the target that was reached.
    pub target: Vec<f64>,
    pub starts: Vec<StartOutcome>,
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// One start: penalty escalation, then augmented Lagrangian polish.
fn minimize_energy(
    map: &EndpointMap,
    target: &[f64],
    theta0: Vec<f64>,
    opts: &DistanceOptions,
) -> (Vec<f64>, f64, f64, usize) {
    let (n, _) = map.dims();
    let s = map.segments as f64;
    let fd = 1e-6;
    let bopts = BfgsOptions {
        max_iter: opts.max_iter,
        ..BfgsOptions::default()
    };
    let objective = |theta: &[f64], lambda: &[f64], mu: f64| -> f64 {
        match map.endpoint(theta) {
            Ok(end) => {
                let c: Vec<f64> = end.iter().zip(target).map(|(a, b)| a - b).collect();
                sq_norm(theta) / s + lambda.iter().zip(&c).map(|(l, v)| l * v).sum::<f64>() + mu * sq_norm(&c)
            }
            Err(_) => f64::INFINITY,
        }
    };
    let with_grad = |theta: &[f64], g: &mut [f64], lambda: &[f64], mu: f64| -> f64 {
        let Ok((end, jac)) = map.jacobian(theta, fd) else {
            return f64::INFINITY;
        };
        let p = theta.len();
        let c: Vec<f64> = end.iter().zip(target).map(|(a, b)| a - b).collect();
        let w: Vec<f64> = (0..n).map(|r| lambda[r] + 2.0 * mu * c[r]).collect();
        for j in 0..p {
            g[j] = 2.0 * theta[j] / s + (0..n).map(|r| jac[r * p + j] * w[r]).sum::<f64>();
        }
        sq_norm(theta) / s + lambda.iter().zip(&c).map(|(l, v)| l * v).sum::<f64>() + mu * sq_norm(&c)
    };
    let violation = |theta: &[f64]| -> f64 { map.endpoint(theta).map(|e| euclid(&e, target)).unwrap_or(f64::INFINITY) };

    let zero = vec![0.0; n];
    let mut theta = theta0;
    let mut iterations = 0;
    for &mu in &opts.penalties {
        let m = bfgs(
            |x, g| with_grad(x, g, &zero, mu),
            |x| objective(x, &zero, mu),
            &theta,
            &bopts,
        );
        iterations += m.iterations;
        theta = m.x;
    }
    let mu = *opts.penalties.last().expect("schedule checked non-empty");
    let mut lambda = vec![0.0; n];
    let mut viol = violation(&theta);
    for _ in 0..opts.max_outer {
        if viol <= 0.1 * opts.tol {
            break;
        }
        let Ok(end) = map.endpoint(&theta) else { break };
        for r in 0..n {
            lambda[r] += 2.0 * mu * (end[r] - target[r]);
        }
        let m = bfgs(
            |x, g| with_grad(x, g, &lambda, mu),
            |x| objective(x, &lambda, mu),
            &theta,
            &bopts,
        );
        iterations += m.iterations;
        theta = m.x;
        viol = violation(&theta);
    }
    let e = sq_norm(&theta) / s;
    (theta, e, viol, iterations)
}

/// Sub-Riemannian distance by multi-start penalized optimal control.
///
/// Start 0 is the zero control; the others are Gaussian with scale
/// `1 + |a - x|`. The lowest feasible energy wins, with ties closer than
/// `1e-6` going to the earlier start.
pub fn sr_distance(model: &ManifoldModel, x: &[f64], a: &[f64], opts: &DistanceOptions) -> Result<DistanceResult> {
    opts.check()?;
    let n = model.dim_n();
    let d = model.dim_d();
    if x.len() != n || a.len() != n {
        return Err(Error::InvalidInput(format!("points must have {n} coordinates")));
    }
    let u0 = FramePoint::identity(model, x)?;
    let map = EndpointMap {
        model,
        u0: &u0,
        drift: None,
        segments: opts.n_controls,
        substeps: opts.substeps,
    };
    let p = opts.n_controls * d;

    let mut targets = model.periodicity().images(a);
    targets.sort_by(|p, q| euclid(p, x).total_cmp(&euclid(q, x)));
    targets.truncate(opts.image_limit);

    if targets.iter().any(|t| euclid(t, x) <= 1e-12) {
        let h = PiecewiseLinearPath::zeros(d, 1.0, opts.n_controls);
        let path = develop(model, &u0, &h.refine(opts.path_refine), None, 1)?.base();
        return Ok(DistanceResult {
            d_sr: 0.0,
            energy: 0.0,
            h_star: h,
            path,
            converged: true,
            constraint_violation: 0.0,
            target: a.to_vec(),
            starts: vec![StartOutcome {
                start: 0,
                energy: 0.0,
                violation: 0.0,
                feasible: true,
                iterations: 0,
            }],
        });
    }

    let runs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| (0..opts.n_starts).map(move |s| (t, s)))
        .collect();
    let results: Vec<(usize, StartOutcome, Vec<f64>)> = runs
        .par_iter()
        .map(|&(t, start)| {
            let target = &targets[t];
            let theta0 = if start == 0 {
                vec![0.0; p]
            } else {
                let scale = 1.0 + euclid(target, x);
                let mut rng = stream_rng(opts.seed, (t * opts.n_starts + start) as u64);
                (0..p)
                    .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect()
            };
            let (theta, energy, violation, iterations) = minimize_energy(&map, target, theta0, opts);
            (
                t,
                StartOutcome {
                    start: t * opts.n_starts + start,
                    energy,
                    violation,
                    feasible: violation <= opts.tol && energy.is_finite(),
                    iterations,
                },
                theta,
            )
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (_, o, _)) in results.iter().enumerate() {
        if !o.feasible {
            continue;
        }
        match best {
            Some(b) if o.energy >= results[b].1.energy - 1e-6 => {}
            _ => best = Some(i),
        }
    }
    let converged = best.is_some();
    let pick = best.unwrap_or_else(|| {
        (0..results.len())
            .min_by(|&i, &j| results[i].1.violation.total_cmp(&results[j].1.violation))
            .expect("at least one start ran")
    });
    let (t, outcome, theta) = &results[pick];
    let h_star = control_path(theta, d)?;
    let path = develop(model, &u0, &h_star.refine(opts.path_refine), None, 1)?.base();
    Ok(DistanceResult {
        d_sr: outcome.energy.sqrt(),
        energy: outcome.energy,
        h_star,
        path,
        converged,
        constraint_violation: outcome.violation,
        target: targets[*t].clone(),
        starts: results.into_iter().map(|(_, o, _)| o).collect(),
    })
}

/// Value of `J(γ) = ½(E(γ) - d_SR(x,a)²)`, infinite off admissible paths from `x` to `a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateValue {
    pub j: f64,
    pub energy: f64,
    pub endpoint_error: f64,
    pub diagnostic: Option<String>,
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        self.j.is_finite()
    }
}

/// `J` on a base path; `d_sr` is the (cached) distance from `x` to `a`.
pub fn rate_j(model: &ManifoldModel, gamma: &BasePath, x: &[f64], a: &[f64], d_sr: f64) -> Result<RateValue> {
    let start_err = model.chart_distance(gamma.start(), x);
    let end_err = model.chart_distance(gamma.end(), a);
    if start_err > ENDPOINT_TOL || end_err > ENDPOINT_TOL {
        return Ok(RateValue {
            j: f64::INFINITY,
            energy: f64::NAN,
            endpoint_error: start_err.max(end_err),
            diagnostic: Some(format!(
                "path runs from {:?} to {:?}, expected {x:?} to {a:?}",
                gamma.start(),
                gamma.end()
            )),
        });
    }
    let pe = energy_path(model, gamma, ADMISSIBILITY_TOL)?;
    let diagnostic = (!pe.admissible).then(|| {
        format!(
            "segment {} has transverse/speed ratio {:e}",
            pe.worst_segment, pe.worst_ratio
        )
    });
    Ok(RateValue {
        j: 0.5 * (pe.energy - d_sr * d_sr),
        energy: pe.energy,
        endpoint_error: end_err,
        diagnostic,
    })
}

/// `J` on the development of `h` from the identity frame at `x`, using `E(ψ(h)) = ‖h‖²`.
pub fn rate_j_control(
    model: &ManifoldModel,
    h: &CameronMartinPath,
    x: &[f64],
    a: &[f64],
    d_sr: f64,
    substeps: usize,
) -> Result<RateValue> {
    let u0 = FramePoint::identity(model, x)?;
    let end = develop(model, &u0, h, None, substeps)?.end().x;
    let err = model.chart_distance(&end, a);
    if err > ENDPOINT_TOL {
        return Ok(RateValue {
            j: f64::INFINITY,
            energy: h.energy(),
            endpoint_error: err,
            diagnostic: Some(format!("control ends at {end:?}, expected {a:?}")),
        });
    }
    Ok(RateValue {
        j: 0.5 * (h.energy() - d_sr * d_sr),
        energy: h.energy(),
        endpoint_error: err,
        diagnostic: None,
    })
}

/// Drift for [`connect`]: the developed path solves `k' = τ A_0(k) + Σ θ_i A_i(k)`.
#[derive(Clone)]
pub struct ConnectDrift {
    pub field: VectorField,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Connected {
    pub h: CameronMartinPath,
    pub endpoint_error: f64,
    pub path: BasePath,
    pub start: usize,
}

/// Finds some control steering `x` to `a` (with optional drift), by least
/// squares on the endpoint error and no energy term. The first start that
/// reaches `tol` is returned.
pub fn connect(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    drift: Option<&ConnectDrift>,
    opts: &DistanceOptions,
) -> Result<Connected> {
    opts.check()?;
    let d = model.dim_d();
    let u0 = FramePoint::identity(model, x)?;
    let dr = drift.map(|c| Drift {
        field: Some(c.field.clone()),
        rate: c.tau,
    });
    let map = EndpointMap {
        model,
        u0: &u0,
        drift: dr.as_ref(),
        segments: opts.n_controls,
        substeps: opts.substeps,
    };
    let p = opts.n_controls * d;
    let n = model.dim_n();
    let finish = |theta: &[f64], err: f64, start: usize| -> Result<Connected> {
        let h = control_path(theta, d)?;
        let path = develop(model, &u0, &h.refine(opts.path_refine), dr.as_ref(), 1)?.base();
        Ok(Connected {
            h,
            endpoint_error: err,
            path,
            start,
        })
    };
    if drift.is_none() && euclid(x, a) <= opts.tol {
        return finish(&vec![0.0; p], euclid(x, a), 0);
    }
    let bopts = BfgsOptions {
        max_iter: opts.max_iter * opts.penalties.len(),
        f_target: (0.01 * opts.tol).powi(2),
        ..BfgsOptions::default()
    };
    let mut worst = f64::INFINITY;
    for start in 0..opts.n_starts {
        let theta0: Vec<f64> = if start == 0 {
            vec![0.0; p]
        } else {
            let mut rng = stream_rng(opts.seed, start as u64);
            (0..p)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let f_only = |th: &[f64]| -> f64 {
            map.endpoint(th)
                .map(|e| e.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum())
                .unwrap_or(f64::INFINITY)
        };
        let fg = |th: &[f64], g: &mut [f64]| -> f64 {
            let Ok((end, jac)) = map.jacobian(th, 1e-6) else {
                return f64::INFINITY;
            };
            for j in 0..p {
                g[j] = (0..n).map(|r| 2.0 * (end[r] - a[r]) * jac[r * p + j]).sum();
            }
            end.iter().zip(a).map(|(u, v)| (u - v) * (u - v)).sum()
        };
        let m = bfgs(fg, f_only, &theta0, &bopts);
        let err = m.f.sqrt();
        if err <= opts.tol {
            return finish(&m.x, err, start);
        }
        worst = worst.min(err);
    }
    Err(Error::Infeasible(format!(
        "no control reached {a:?} from {x:?} within {}; best endpoint error {worst:e}",
        opts.tol
    )))
}

/// Worst ratio `|P_⊥ F⁻¹(k' - τ V(k))| / |F⁻¹(k' - τ V(k))|` over the chords of `path`.
pub fn drift_admissibility(model: &ManifoldModel, path: &BasePath, field: &VectorField, tau: f64) -> Result<f64> {
    let n = model.dim_n();
    let d = model.dim_d();
    let mut worst: f64 = 0.0;
    let mut v = vec![0.0; n];
    for j in 0..path.len() - 1 {
        let (p, q) = (path.point(j), path.point(j + 1));
        let dt = path.times()[j + 1] - path.times()[j];
        let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
        field(&mid, &mut v);
        let w: Vec<f64> = (0..n).map(|i| (q[i] - p[i]) / dt - tau * v[i]).collect();
        let c = model.frame_coordinates(&mid, &w)?;
        let speed = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let perp = c[d..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if speed > 0.0 {
            worst = worst.max(perp / speed);
        }
    }
    Ok(worst)
}

/// Deterministic Malliavin covariance `Γ(h, 0)_t` of the base endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalliavinReport {
    pub n: usize,
    /// `n x n`, row-major.
    pub gamma: Vec<f64>,
    pub det: f64,
    pub min_eigenvalue: f64,
    /// `max_t ‖J_t K_t - I‖_∞`.
    pub jk_residual: f64,
    /// `max |Γ - Γᵀ|` before symmetrization.
    pub asymmetry: f64,
}

/// Integrates the skeleton `dy = Σ A_i(y) h'_i dt` in embedded bundle
/// coordinates with its Jacobian `J`, inverse `K` and
/// `C_t = ∫ K V Vᵀ Kᵀ ds`, then returns `Γ = ∇π J C Jᵀ ∇πᵀ`.
/// `∇A_i` comes from central differences.
pub fn malliavin_cov(
    model: &ManifoldModel,
    u0: &FramePoint,
    h: &CameronMartinPath,
    t: f64,
    substeps: usize,
) -> Result<MalliavinReport> {
    let n = model.dim_n();
    let d = model.dim_d();
    if h.dim() != d {
        return Err(Error::InvalidInput(format!("control must be {d}-dimensional")));
    }
    if !(t > 0.0 && t <= h.horizon()) {
        return Err(Error::InvalidInput(format!("t = {t} outside (0, {}]", h.horizon())));
    }
    let big = n + n * n;
    let mut eng = Engine::new(model, None);
    let fd = 1e-6;
    let mut fields = vec![0.0; d * big];
    let mut grads = vec![0.0; d * big * big];
    let mut plus = vec![0.0; big];
    let mut minus = vec![0.0; big];

    // Flattened state: y, then J, K, C (column-major N x N each).
    let len = big + 3 * big * big;
    let mut deriv = |state: &[f64], k: &[f64], out: &mut [f64]| {
        let y = &state[..big];
        let mut ys = y.to_vec();
        for i in 0..d {
            eng.canonical_field_into(y, i, &mut fields[i * big..(i + 1) * big]);
            for l in 0..big {
                ys[l] = y[l] + fd;
                eng.canonical_field_into(&ys, i, &mut plus);
                ys[l] = y[l] - fd;
                eng.canonical_field_into(&ys, i, &mut minus);
                ys[l] = y[l];
                for r in 0..big {
                    grads[i * big * big + l * big + r] = (plus[r] - minus[r]) / (2.0 * fd);
                }
            }
        }
        let mut b = DMatrix::<f64>::zeros(big, big);
        let mut dy = vec![0.0; big];
        for i in 0..d {
            for r in 0..big {
                dy[r] += k[i] * fields[i * big + r];
            }
            let gi = DMatrix::from_column_slice(big, big, &grads[i * big * big..(i + 1) * big * big]);
            b += gi * k[i];
        }
        let jm = DMatrix::from_column_slice(big, big, &state[big..big + big * big]);
        let km = DMatrix::from_column_slice(big, big, &state[big + big * big..big + 2 * big * big]);
        let vm = DMatrix::from_fn(big, d, |r, i| fields[i * big + r]);
        let kv = &km * vm;
        let dj = &b * &jm;
        let dk = -(&km * &b);
        let dc = &kv * kv.transpose();
        out[..big].copy_from_slice(&dy);
        out[big..big + big * big].copy_from_slice(dj.as_slice());
        out[big + big * big..big + 2 * big * big].copy_from_slice(dk.as_slice());
        out[big + 2 * big * big..].copy_from_slice(dc.as_slice());
    };

    let mut state = vec![0.0; len];
    state[..n].copy_from_slice(&u0.x);
    state[n..big].copy_from_slice(&u0.e);
    for r in 0..big {
        state[big + r * big + r] = 1.0;
        state[big + big * big + r * big + r] = 1.0;
    }
    let jk_res = |state: &[f64]| -> f64 {
        let jm = DMatrix::from_column_slice(big, big, &state[big..big + big * big]);
        let km = DMatrix::from_column_slice(big, big, &state[big + big * big..big + 2 * big * big]);
        (jm * km - DMatrix::<f64>::identity(big, big)).amax()
    };

    let mut jk_residual: f64 = 0.0;
    let seg_dt = h.dt();
    let incs = h.increments();
    let sub = substeps.max(1);
    let mut s = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut tmp = vec![0.0; len];
    let mut now = 0.0;
    for (seg, inc) in incs.chunks(d).enumerate() {
        if now >= t - 1e-15 {
            break;
        }
        let k: Vec<f64> = inc.iter().map(|v| v / seg_dt).collect();
        let seg_end = ((seg + 1) as f64 * seg_dt).min(t);
        let dt = (seg_end - now) / sub as f64;
        for _ in 0..sub {
            deriv(&state, &k, &mut s[0]);
            for i in 0..len {
                tmp[i] = state[i] + 0.5 * dt * s[0][i];
            }
            deriv(&tmp, &k, &mut s[1]);
            for i in 0..len {
                tmp[i] = state[i] + 0.5 * dt * s[1][i];
            }
            deriv(&tmp, &k, &mut s[2]);
            for i in 0..len {
                tmp[i] = state[i] + dt * s[2][i];
            }
            deriv(&tmp, &k, &mut s[3]);
            for i in 0..len {
                state[i] += dt / 6.0 * (s[0][i] + 2.0 * (s[1][i] + s[2][i]) + s[3][i]);
            }
        }
        now = seg_end;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("Jacobian system blew up at t = {now}")));
        }
        jk_residual = jk_residual.max(jk_res(&state));
    }
    if jk_residual > 1e-6 {
        return Err(Error::Numerical(format!(
            "Jacobian lost invertibility: |JK - I| = {jk_residual:e}"
        )));
    }
    let jm = DMatrix::from_column_slice(big, big, &state[big..big + big * big]);
    let cm = DMatrix::from_column_slice(big, big, &state[big + 2 * big * big..]);
    let full = &jm * cm * jm.transpose();
    let raw = full.view((0, 0), (n, n)).into_owned();
    let asymmetry = (&raw - raw.transpose()).amax();
    let sym = (&raw + raw.transpose()) * 0.5;
    let det = sym.determinant();
    let min_eigenvalue = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    let gamma: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| sym[(i, j)])
        .collect();
    Ok(MalliavinReport {
        n,
        gamma,
        det,
        min_eigenvalue,
        jk_residual,
        asymmetry,
    })
}
