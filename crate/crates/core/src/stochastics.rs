//! Small-noise diffusions on the frame bundle by Wong–Zakai development.
//!
//! The process `dU = ε Σ A_i(U) ∘ dw^i + ε² A_0(U) dt` is realized by
//! developing `ε w(k)`, the level-`k` piecewise-linear interpolation of a
//! Brownian path, with drift `A_0 = ℓ⟨V + drift correction⟩` at rate `ε²`.
//!
//! Every trajectory owns a ChaCha stream selected by `(seed, index)`, and
//! normals are drawn segment by segment, coordinate by coordinate. Results
//! therefore do not depend on how trajectories are spread over threads.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame_bundle::{develop, Drift, Engine, FramePoint, FrameTrajectory};
use crate::geometry::{ManifoldModel, VectorField};
use crate::paths::{BasePath, PiecewiseLinearPath};
use crate::stats::{self, TwoSampleReport};

/// Permutations used by the distributional checks.
pub const DEFAULT_PERMUTATIONS: usize = 200;

/// Independent random stream for trajectory `index`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn fill_increments(rng: &mut ChaCha8Rng, scale: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

/// Level-`k` piecewise-linear Brownian path in `R^dim` on `[0, horizon]`.
pub fn sample_brownian(level: u32, dim: usize, horizon: f64, rng: &mut ChaCha8Rng) -> Result<PiecewiseLinearPath> {
    if level == 0 || level > 24 {
        return Err(Error::InvalidInput(format!(
            "dyadic level must be in 1..=24, got {level}"
        )));
    }
    let k = 1usize << level;
    let mut incs = vec![0.0; k * dim];
    fill_increments(rng, (horizon / k as f64).sqrt(), &mut incs);
    PiecewiseLinearPath::from_increments(dim, horizon, &incs)
}

/// Parameters shared by single-path and ensemble simulation.
#[derive(Clone)]
pub struct SimSpec {
    pub eps: f64,
    pub level: u32,
    /// Final time of the diffusion.
    pub horizon: f64,
    pub seed: u64,
    /// Drift field `V`; the drift correction is always added.
    pub drift: Option<VectorField>,
}

impl SimSpec {
    pub fn new(eps: f64, level: u32, seed: u64) -> Self {
        SimSpec {
            eps,
            level,
            horizon: 1.0,
            seed,
            drift: None,
        }
    }

    pub fn with_horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn with_drift(mut self, v: VectorField) -> Self {
        self.drift = Some(v);
        self
    }

    pub(crate) fn validate(&self, model: &ManifoldModel, u0: &FramePoint) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ε must be finite and >= 0, got {}",
                self.eps
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.level == 0 || self.level > 24 {
            return Err(Error::InvalidInput(format!(
                "dyadic level must be in 1..=24, got {}",
                self.level
            )));
        }
        if u0.n() != model.dim_n() {
            return Err(Error::InvalidInput("initial point has wrong dimension".into()));
        }
        Ok(())
    }

    pub(crate) fn drift(&self) -> Drift {
        Drift {
            field: self.drift.clone(),
            rate: self.eps * self.eps,
        }
    }

    pub(crate) fn segments(&self) -> usize {
        1usize << self.level
    }
}

/// One trajectory: `develop(u0, ε w(k), drift (V + correction, ε²))`.
pub fn simulate(model: &ManifoldModel, u0: &FramePoint, spec: &SimSpec, index: u64) -> Result<FrameTrajectory> {
    spec.validate(model, u0)?;
    let drift = spec.drift();
    let mut sim = Simulator::new(model, u0, spec, &drift);
    let k = spec.segments();
    let dt = spec.horizon / k as f64;
    let mut traj = FrameTrajectory::with_capacity(model.dim_n(), k + 1);
    let mut y0 = u0.x.clone();
    y0.extend_from_slice(&u0.e);
    traj.push(0.0, &y0);
    sim.run(index, |i, y| traj.push(i as f64 * dt, y))?;
    Ok(traj)
}

/// Reusable per-worker buffers for batch simulation.
pub(crate) struct Simulator<'a> {
    engine: Engine<'a>,
    incs: Vec<f64>,
    u0: &'a FramePoint,
    spec: &'a SimSpec,
    d: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a ManifoldModel, u0: &'a FramePoint, spec: &'a SimSpec, drift: &'a Drift) -> Self {
        Simulator {
            engine: Engine::new(model, Some(drift)),
            incs: vec![0.0; spec.segments() * model.dim_d()],
            u0,
            spec,
            d: model.dim_d(),
        }
    }

    /// Runs trajectory `index`; `on_point(i, y)` sees the state after segment `i`.
    pub fn run(&mut self, index: u64, on_point: impl FnMut(usize, &[f64])) -> Result<&[f64]> {
        let k = self.spec.segments();
        let dt = self.spec.horizon / k as f64;
        let mut rng = stream_rng(self.spec.seed, index);
        fill_increments(&mut rng, dt.sqrt(), &mut self.incs);
        let eps = self.spec.eps;
        self.incs.iter_mut().for_each(|v| *v *= eps);
        self.engine.set_state(self.u0);
        self.engine.run(&self.incs, self.d, dt, 1, 0.0, on_point)?;
        Ok(&self.engine.y)
    }
}

/// Batch of simulated endpoints `X^ε_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub model: String,
    pub eps: f64,
    pub horizon: f64,
    pub level: u32,
    pub seed: u64,
    pub dim: usize,
    /// `N x n` row-major chart endpoints (covering-space coordinates).
    pub endpoints: Vec<f64>,
    /// Base paths, present when requested.
    #[serde(skip)]
    pub paths: Option<Vec<BasePath>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.endpoints.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn endpoint(&self, i: usize) -> &[f64] {
        &self.endpoints[i * self.dim..(i + 1) * self.dim]
    }

    /// Compact binary batch: magic `SRLB`, version, then little-endian
    /// `eps, horizon, level, seed, N, n` and the endpoint matrix.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SRLB")?;
        w.write_all(&1u32.to_le_bytes())?;
        let name = self.model.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&self.eps.to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.level.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.endpoints {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != b"SRLB" {
            return Err(Error::InvalidInput("not an ensemble batch file".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != 1 {
            return Err(Error::InvalidInput(format!("unsupported batch version {version}")));
        }
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let model = String::from_utf8(name).map_err(|_| Error::InvalidInput("bad model name".into()))?;
        let eps = f64::from_le_bytes(take(&mut r)?);
        let horizon = f64::from_le_bytes(take(&mut r)?);
        let level = u32::from_le_bytes(take(&mut r)?);
        let seed = u64::from_le_bytes(take(&mut r)?);
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut endpoints = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            endpoints.push(f64::from_le_bytes(take(&mut r)?));
        }
        Ok(Ensemble {
            model,
            eps,
            horizon,
            level,
            seed,
            dim,
            endpoints,
            paths: None,
        })
    }

    /// CSV with columns `index, x1..xn`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![i.to_string()];
            row.extend(self.endpoint(i).iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Simulates trajectories `0..count` in parallel and collects endpoints in index order.
pub fn generate_ensemble(
    model: &ManifoldModel,
    u0: &FramePoint,
    spec: &SimSpec,
    count: usize,
    keep_paths: bool,
) -> Result<Ensemble> {
    spec.validate(model, u0)?;
    if count == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    let n = model.dim_n();
    let k = spec.segments();
    let drift = spec.drift();
    let dt = spec.horizon / k as f64;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
    let results: Vec<Result<(Vec<f64>, Option<BasePath>)>> = (0..count as u64)
        .into_par_iter()
        .map_init(
            || Simulator::new(model, u0, spec, &drift),
            |sim, idx| {
                let mut pts = if keep_paths {
                    let mut v = Vec::with_capacity((k + 1) * n);
                    v.extend_from_slice(&u0.x);
                    Some(v)
                } else {
                    None
                };
                let end = sim.run(idx, |_, y| {
                    if let Some(p) = pts.as_mut() {
                        p.extend_from_slice(&y[..n]);
                    }
                })?;
                let end = end[..n].to_vec();
                let path = match pts {
                    Some(p) => Some(BasePath::new(n, times.clone(), p)?),
                    None => None,
                };
                Ok((end, path))
            },
        )
        .collect();
    let mut endpoints = Vec::with_capacity(count * n);
    let mut paths = keep_paths.then(|| Vec::with_capacity(count));
    for r in results {
        let (e, p) = r?;
        endpoints.extend(e);
        if let (Some(ps), Some(p)) = (paths.as_mut(), p) {
            ps.push(p);
        }
    }
    Ok(Ensemble {
        model: model.name().to_string(),
        eps: spec.eps,
        horizon: spec.horizon,
        level: spec.level,
        seed: spec.seed,
        dim: n,
        endpoints,
        paths,
    })
}

/// Energy-distance test between `{X^ε_1}` and `{X^1_{ε²}}` endpoint samples.
pub fn scaling_law_check(
    model: &ManifoldModel,
    u0: &FramePoint,
    eps: f64,
    count: usize,
    level: u32,
    seeds: (u64, u64),
) -> Result<TwoSampleReport> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("ε must lie in (0, 1], got {eps}")));
    }
    let a = generate_ensemble(model, u0, &SimSpec::new(eps, level, seeds.0), count, false)?;
    let b = generate_ensemble(
        model,
        u0,
        &SimSpec::new(1.0, level, seeds.1).with_horizon(eps * eps),
        count,
        false,
    )?;
    stats::energy_distance_test(
        &a.endpoints,
        &b.endpoints,
        model.dim_n(),
        DEFAULT_PERMUTATIONS,
        seeds.0 ^ seeds.1,
    )
}

/// Two-sample test between projected endpoints started from two frames over the same point.
pub fn frame_independence_check(
    model: &ManifoldModel,
    u0a: &FramePoint,
    u0b: &FramePoint,
    eps: f64,
    count: usize,
    level: u32,
    seeds: (u64, u64),
) -> Result<TwoSampleReport> {
    let gap = model.chart_distance(&u0a.x, &u0b.x);
    if gap > 1e-12 {
        return Err(Error::BasePointMismatch(format!(
            "initial frames sit over {:?} and {:?}",
            u0a.x, u0b.x
        )));
    }
    let a = generate_ensemble(model, u0a, &SimSpec::new(eps, level, seeds.0), count, false)?;
    let b = generate_ensemble(model, u0b, &SimSpec::new(eps, level, seeds.1), count, false)?;
    stats::energy_distance_test(
        &a.endpoints,
        &b.endpoints,
        model.dim_n(),
        DEFAULT_PERMUTATIONS,
        seeds.0 ^ seeds.1,
    )
}

/// Two-sample test between two models sharing frame and volume but not connection.
pub fn connection_independence_check(
    model_a: &ManifoldModel,
    model_b: &ManifoldModel,
    x: &[f64],
    eps: f64,
    count: usize,
    level: u32,
    seeds: (u64, u64),
) -> Result<TwoSampleReport> {
    if model_a.dim_n() != model_b.dim_n() || model_a.dim_d() != model_b.dim_d() {
        return Err(Error::InvalidInput("models have different dimensions".into()));
    }
    let ua = FramePoint::identity(model_a, x)?;
    let ub = FramePoint::identity(model_b, x)?;
    let a = generate_ensemble(model_a, &ua, &SimSpec::new(eps, level, seeds.0), count, false)?;
    let b = generate_ensemble(model_b, &ub, &SimSpec::new(eps, level, seeds.1), count, false)?;
    stats::energy_distance_test(
        &a.endpoints,
        &b.endpoints,
        model_a.dim_n(),
        DEFAULT_PERMUTATIONS,
        seeds.0 ^ seeds.1,
    )
}

/// One row of the Wong–Zakai refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub level: u32,
    /// Median over seeds of `|X_{k} - X_{k+1}|` at the final time.
    pub median_gap: f64,
}

/// Develops the same Brownian sample at levels `k` and `k + 1` for each
/// `k` in `levels` and reports median endpoint gaps over `n_seeds` paths.
pub fn wong_zakai_refinement(
    model: &ManifoldModel,
    u0: &FramePoint,
    eps: f64,
    levels: std::ops::RangeInclusive<u32>,
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<RefinementRow>> {
    let top = *levels.end() + 1;
    let d = model.dim_d();
    let drift = Drift::correction_only(eps * eps);
    let mut gaps: Vec<Vec<f64>> = vec![Vec::new(); levels.clone().count()];
    for s in 0..n_seeds as u64 {
        let mut rng = stream_rng(seed, s);
        let fine = sample_brownian(top, d, 1.0, &mut rng)?;
        let mut ends = Vec::new();
        for k in *levels.start()..=top {
            let factor = 1usize << (top - k);
            let coarse_vals: Vec<f64> = (0..=(1usize << k))
                .flat_map(|i| fine.value(i * factor).to_vec())
                .collect();
            let w = PiecewiseLinearPath::from_values(d, 1.0, coarse_vals)?;
            let tr = develop(model, u0, &w.scale(eps), Some(&drift), 1)?;
            ends.push(tr.end().x);
        }
        for (j, g) in gaps.iter_mut().enumerate() {
            g.push(crate::geometry::euclid(&ends[j], &ends[j + 1]));
        }
    }
    Ok(levels
        .zip(gaps)
        .map(|(level, g)| RefinementRow {
            level,
            median_gap: stats::median(&g),
        })
        .collect())
}
