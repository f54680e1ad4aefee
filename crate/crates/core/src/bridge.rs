//! Pinned diffusions by endpoint rejection, their finite-dimensional
//! distributions on flat models, and concentration around minimizers.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::frame_bundle::FramePoint;
use crate::geometry::ManifoldModel;
use crate::paths::BasePath;
use crate::stats;
use crate::stochastics::{SimSpec, Simulator};
use crate::variational::rate_j;

/// Proposals simulated per parallel batch.
const BATCH: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeSpec {
    pub eps: f64,
    /// Acceptance radius in lattice-aware chart distance.
    pub delta: f64,
    pub level: u32,
    pub seed: u64,
    pub n_target: usize,
    /// Maximum number of proposals.
    pub budget: usize,
    /// Stored path resolution: `record + 1` points on a uniform grid (power of two, at most `2^level`).
    pub record: usize,
}

impl BridgeSpec {
    pub fn new(eps: f64, delta: f64, level: u32, seed: u64, n_target: usize, budget: usize) -> Self {
        Self {
            eps,
            delta,
            level,
            seed,
            n_target,
            budget,
            record: 64.min(1 << level),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "acceptance radius must be positive, got {}",
                self.delta
            )));
        }
        if self.n_target == 0 || self.budget == 0 {
            return Err(Error::InvalidInput("n_target and budget must be positive".into()));
        }
        let k = 1usize << self.level.min(24);
        if !self.record.is_power_of_two() || self.record > k {
            return Err(Error::InvalidInput(format!(
                "record = {} must be a power of two no larger than {k}",
                self.record
            )));
        }
        Ok(())
    }
}

/// Accepted bridge paths from `x` to within `delta` of `a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeEnsemble {
    pub eps: f64,
    pub delta: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub seed: u64,
    pub n: usize,
    /// Proposals examined up to the last accepted one (or the whole budget).
    pub proposals: usize,
    pub acceptance_rate: f64,
    pub times: Vec<f64>,
    /// `accepted x (record + 1) x n`, row-major, covering-space coordinates.
    pub paths: Vec<f64>,
    /// Proposal index of each accepted path.
    pub indices: Vec<u64>,
}

impl BridgeEnsemble {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn stride(&self) -> usize {
        self.times.len() * self.n
    }

    /// Point `j` of path `i`.
    pub fn point(&self, i: usize, j: usize) -> &[f64] {
        let s = i * self.stride() + j * self.n;
        &self.paths[s..s + self.n]
    }

    pub fn endpoint(&self, i: usize) -> &[f64] {
        self.point(i, self.times.len() - 1)
    }

    pub fn base_path(&self, i: usize) -> BasePath {
        BasePath::new(
            self.n,
            self.times.clone(),
            self.paths[i * self.stride()..(i + 1) * self.stride()].to_vec(),
        )
        .expect("stored paths are on the shared grid")
    }

    /// Largest endpoint distance to `a`; at most `delta` by construction.
    pub fn max_endpoint_error(&self, model: &ManifoldModel) -> f64 {
        (0..self.len())
            .map(|i| model.chart_distance(self.endpoint(i), &self.a))
            .fold(0.0, f64::max)
    }
}

/// Forward simulation from the identity frame at `x`, keeping paths whose
/// endpoint lands in `B(a, δ)`. Proposals are processed in index order and
/// the first `n_target` acceptances are kept, so the result does not depend
/// on the worker count.
pub fn sample_bridges(model: &ManifoldModel, x: &[f64], a: &[f64], spec: &BridgeSpec) -> Result<BridgeEnsemble> {
    spec.check()?;
    let n = model.dim_n();
    if a.len() != n {
        return Err(Error::InvalidInput(format!("target must have {n} coordinates")));
    }
    let u0 = FramePoint::identity(model, x)?;
    let sim_spec = SimSpec::new(spec.eps, spec.level, spec.seed);
    sim_spec.validate(model, &u0)?;
    let drift = sim_spec.drift();
    let k = sim_spec.segments();
    let every = k / spec.record;
    let times: Vec<f64> = (0..=spec.record).map(|j| j as f64 / spec.record as f64).collect();
    let per_path = (spec.record + 1) * n;

    let mut paths = Vec::new();
    let mut indices = Vec::new();
    let mut examined = 0usize;
    while indices.len() < spec.n_target && examined < spec.budget {
        let end = (examined + BATCH).min(spec.budget);
        let batch: Vec<Result<Option<(u64, Vec<f64>)>>> = (examined as u64..end as u64)
            .into_par_iter()
            .map_init(
                || Simulator::new(model, &u0, &sim_spec, &drift),
                |sim, idx| {
                    let mut rec = Vec::with_capacity(per_path);
                    rec.extend_from_slice(x);
                    let y = sim.run(idx, |i, y| {
                        if i % every == 0 {
                            rec.extend_from_slice(&y[..n]);
                        }
                    })?;
                    Ok((model.chart_distance(&y[..n], a) < spec.delta).then_some((idx, rec)))
                },
            )
            .collect();
        for r in batch {
            if let Some((idx, rec)) = r? {
                if indices.len() < spec.n_target {
                    indices.push(idx);
                    paths.extend(rec);
                }
            }
        }
        examined = end;
    }
    if indices.is_empty() {
        return Err(Error::Infeasible(format!(
            "no bridge from {x:?} reached B({a:?}, {}) in {} proposals at ε = {}; increase δ or ε",
            spec.delta, spec.budget, spec.eps
        )));
    }
    let proposals = if indices.len() == spec.n_target {
        *indices.last().expect("non-empty") as usize + 1
    } else {
        examined
    };
    Ok(BridgeEnsemble {
        eps: spec.eps,
        delta: spec.delta,
        x: x.to_vec(),
        a: a.to_vec(),
        seed: spec.seed,
        n,
        proposals,
        acceptance_rate: indices.len() as f64 / proposals as f64,
        times,
        paths,
        indices,
    })
}

/// Accepted bridges needed for a conclusive marginal comparison.
pub const FDD_MIN_ACCEPTED: usize = 2000;
/// Kolmogorov–Smirnov threshold for the marginal comparison.
pub const FDD_KS_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FddReport {
    pub t_mid: f64,
    /// KS distance per coordinate.
    pub ks: Vec<f64>,
    pub max_ks: f64,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub pass: bool,
    pub inconclusive: bool,
}

/// Compares the accepted bridges at `t_mid` with the exact flat bridge
/// marginal `N(x + t(a* - x), ε² t(1-t) I)`, where `a*` is the lattice
/// translate of `a` nearest `x`. Wrap-around of the torus kernel is ignored,
/// which is exact up to `exp(-L²/8ε²)` for side `L`.
pub fn fdd_consistency(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    t_mid: f64,
    spec: &BridgeSpec,
) -> Result<FddReport> {
    let n = model.dim_n();
    if model.dim_d() != n || !model.has_constant_frame() || !model.has_zero_connection() {
        return Err(Error::InvalidInput(format!(
            "fdd_consistency needs a flat model, got `{}`",
            model.name()
        )));
    }
    let f = model.eval_frame(x)?;
    if (f - nalgebra::DMatrix::<f64>::identity(n, n)).amax() > 1e-12 {
        return Err(Error::InvalidInput("fdd_consistency needs the identity frame".into()));
    }
    let pos = t_mid * spec.record as f64;
    if !(t_mid > 0.0 && t_mid < 1.0) || (pos - pos.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "t_mid = {t_mid} must be an interior point of the {}-cell record grid",
            spec.record
        )));
    }
    let j = pos.round() as usize;
    let bridges = sample_bridges(model, x, a, spec)?;
    let a_star = model
        .periodicity()
        .images(a)
        .into_iter()
        .min_by(|p, q| crate::geometry::euclid(p, x).total_cmp(&crate::geometry::euclid(q, x)))
        .expect("images include a");
    let sd = spec.eps * (t_mid * (1.0 - t_mid)).sqrt();
    let ks: Vec<f64> = (0..n)
        .map(|c| {
            let mean = x[c] + t_mid * (a_star[c] - x[c]);
            let law = Normal::new(mean, sd).expect("positive spread");
            let sample: Vec<f64> = (0..bridges.len()).map(|i| bridges.point(i, j)[c]).collect();
            stats::ks_statistic(&sample, |v| law.cdf(v))
        })
        .collect();
    let max_ks = ks.iter().copied().fold(0.0, f64::max);
    let inconclusive = bridges.len() < FDD_MIN_ACCEPTED;
    Ok(FddReport {
        t_mid,
        ks,
        max_ks,
        accepted: bridges.len(),
        acceptance_rate: bridges.acceptance_rate,
        pass: !inconclusive && max_ks < FDD_KS_THRESHOLD,
        inconclusive,
    })
}

/// Reference paths: `geodesic` and, when the model's symmetry fixes both `x`
/// and `a`, its images under `orbit` equally spaced rotations about `x`.
pub fn geodesic_orbit(model: &ManifoldModel, x: &[f64], a: &[f64], geodesic: &BasePath, orbit: usize) -> Vec<BasePath> {
    let mut out = vec![geodesic.clone()];
    let Some(sym) = model.oracles().symmetry.as_ref() else {
        return out;
    };
    let fixes = [0.7, 2.1]
        .iter()
        .all(|&th| model.chart_distance(&sym(th, x, a), a) < 1e-9);
    if !fixes || orbit < 2 {
        return out;
    }
    for k in 1..orbit {
        let th = 2.0 * std::f64::consts::PI * k as f64 / orbit as f64;
        let pts: Vec<f64> = (0..geodesic.len())
            .flat_map(|i| sym(th, x, geodesic.point(i)))
            .collect();
        out.push(BasePath::new(geodesic.n(), geodesic.times().to_vec(), pts).expect("same grid"));
    }
    out
}

/// `min_g sup_t d(path_t, g_t)` over the reference set, at the bridge grid times.
fn sup_distance_to(model: &ManifoldModel, bridges: &BridgeEnsemble, i: usize, refs: &[Vec<Vec<f64>>]) -> f64 {
    refs.iter()
        .map(|g| {
            g.iter()
                .enumerate()
                .map(|(j, q)| model.chart_distance(bridges.point(i, j), q))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn sample_refs(refs: &[BasePath], times: &[f64]) -> Vec<Vec<Vec<f64>>> {
    refs.iter()
        .map(|g| {
            let (t0, t1) = (g.times()[0], g.times()[g.len() - 1]);
            times.iter().map(|&t| g.eval(t0 + t * (t1 - t0))).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub eps: f64,
    pub delta: f64,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub median_sup_dist: f64,
    pub q90_sup_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCurve {
    pub rows: Vec<ConcentrationRow>,
    pub strictly_decreasing: bool,
}

/// Settings shared by the ladder diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderSpec {
    /// `δ = delta_factor · ε`.
    pub delta_factor: f64,
    pub level: u32,
    pub seed: u64,
    pub n_target: usize,
    pub budget: usize,
    pub record: usize,
}

impl LadderSpec {
    fn bridge(&self, eps: f64, index: usize) -> BridgeSpec {
        BridgeSpec {
            eps,
            delta: self.delta_factor * eps,
            level: self.level,
            seed: self.seed + index as u64,
            n_target: self.n_target,
            budget: self.budget,
            record: self.record,
        }
    }
}

/// Sup-distance of bridges to the minimizing geodesic (orbit) along `eps_list`.
pub fn concentration_curve(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    eps_list: &[f64],
    geodesic: &BasePath,
    orbit: usize,
    ladder: &LadderSpec,
) -> Result<ConcentrationCurve> {
    let refs = geodesic_orbit(model, x, a, geodesic, orbit);
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let spec = ladder.bridge(eps, i);
        let bridges = sample_bridges(model, x, a, &spec)?;
        let sampled = sample_refs(&refs, &bridges.times);
        let dists: Vec<f64> = (0..bridges.len())
            .into_par_iter()
            .map(|k| sup_distance_to(model, &bridges, k, &sampled))
            .collect();
        rows.push(ConcentrationRow {
            eps,
            delta: spec.delta,
            accepted: bridges.len(),
            acceptance_rate: bridges.acceptance_rate,
            median_sup_dist: stats::median(&dists),
            q90_sup_dist: stats::quantile(&dists, 0.9),
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].median_sup_dist < w[0].median_sup_dist);
    Ok(ConcentrationCurve {
        rows,
        strictly_decreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeRow {
    pub eps: f64,
    pub accepted: usize,
    pub in_tube: usize,
    pub fraction: f64,
    pub eps2_log_fraction: f64,
    /// `-J(γ_ref)`.
    pub reference: f64,
    pub feasible: bool,
}

/// Fraction of bridges staying within `tube_radius` of `gamma_ref`, reported
/// as `ε² log fraction` next to `-J(γ_ref)`. Trend diagnostic only.
#[allow(clippy::too_many_arguments)]
pub fn rate_function_tube_check(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    gamma_ref: &BasePath,
    d_sr: f64,
    eps_list: &[f64],
    tube_radius: f64,
    ladder: &LadderSpec,
) -> Result<Vec<TubeRow>> {
    if !(tube_radius > 0.0) {
        return Err(Error::InvalidInput("tube radius must be positive".into()));
    }
    let reference = -rate_j(model, gamma_ref, x, a, d_sr)?.j;
    let refs = [gamma_ref.clone()];
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let bridges = sample_bridges(model, x, a, &ladder.bridge(eps, i))?;
        let sampled = sample_refs(&refs, &bridges.times);
        let in_tube = (0..bridges.len())
            .into_par_iter()
            .filter(|&k| sup_distance_to(model, &bridges, k, &sampled) <= tube_radius)
            .count();
        let fraction = in_tube as f64 / bridges.len() as f64;
        rows.push(TubeRow {
            eps,
            accepted: bridges.len(),
            in_tube,
            fraction,
            eps2_log_fraction: eps * eps * fraction.ln(),
            reference,
            feasible: in_tube > 0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn large_radius_accepts_everything() {
        let m = models::flat_torus(1, 20.0);
        let spec = BridgeSpec::new(0.5, 100.0, 6, 3, 500, 10_000);
        let b = sample_bridges(&m, &[0.0], &[0.0], &spec).unwrap();
        assert_eq!(b.len(), 500);
        assert_eq!(b.acceptance_rate, 1.0);
        assert_eq!(b.times.len(), 65);
        assert_eq!(b.point(0, 0), &[0.0]);
    }

    #[test]
    fn accepted_paths_meet_the_radius() {
        let m = models::flat_torus(1, 20.0);
        let spec = BridgeSpec::new(0.5, 0.05, 6, 4, 200, 100_000);
        let b = sample_bridges(&m, &[0.0], &[0.0], &spec).unwrap();
        assert!(b.max_endpoint_error(&m) < 0.05);
        assert_eq!(b.len(), 200);
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let m = models::flat_torus(1, 200.0);
        let spec = BridgeSpec::new(0.1, 0.01, 4, 1, 10, 1000);
        assert!(matches!(
            sample_bridges(&m, &[0.0], &[50.0], &spec),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn heisenberg_orbit_is_used_on_the_axis_only() {
        let m = models::heisenberg();
        let g = BasePath::straight(&[0.0; 3], &[1.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(geodesic_orbit(&m, &[0.0; 3], &[0.0, 0.0, 1.0], &g, 8).len(), 8);
        assert_eq!(geodesic_orbit(&m, &[0.0; 3], &[1.0, 0.0, 0.0], &g, 8).len(), 1);
    }
}
