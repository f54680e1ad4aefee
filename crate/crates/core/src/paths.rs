//! Piecewise-linear paths on uniform grids and base-space trajectories.

use serde::Serialize;

use crate::error::{Error, Result};

/// Piecewise-linear path in `R^dim` on the uniform grid `t_i = T i / K`, `h(0) = 0`.
///
/// Values are stored row-major: `values[i * dim + j]` is coordinate `j` at `t_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinearPath {
    dim: usize,
    horizon: f64,
    values: Vec<f64>,
}

/// Finite-energy control path; same representation as a piecewise-linear path.
pub type CameronMartinPath = PiecewiseLinearPath;

impl PiecewiseLinearPath {
    /// Builds a path from grid values (`K + 1` rows). The first row must be zero.
    pub fn from_values(dim: usize, horizon: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("path dimension must be positive".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if !values.len().is_multiple_of(dim) || values.len() < 2 * dim {
            return Err(Error::InvalidInput(format!(
                "{} values do not form at least two rows of width {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("path values must be finite".into()));
        }
        if values[..dim].iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidInput("path must start at 0".into()));
        }
        Ok(Self { dim, horizon, values })
    }

    /// Builds a path from per-segment increments (`K` rows).
    pub fn from_increments(dim: usize, horizon: f64, increments: &[f64]) -> Result<Self> {
        if dim == 0 || increments.is_empty() || !increments.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput("increments must form whole rows".into()));
        }
        let k = increments.len() / dim;
        let mut values = vec![0.0; (k + 1) * dim];
        for i in 0..k {
            for j in 0..dim {
                values[(i + 1) * dim + j] = values[i * dim + j] + increments[i * dim + j];
            }
        }
        Self::from_values(dim, horizon, values)
    }

    /// Samples `f` at the grid times of a `K`-segment grid on `[0, horizon]`,
    /// shifting so the path starts at 0.
    pub fn from_fn(dim: usize, horizon: f64, segments: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidInput("need at least one segment".into()));
        }
        let f0 = f(0.0);
        let mut values = Vec::with_capacity((segments + 1) * dim);
        for i in 0..=segments {
            let t = horizon * i as f64 / segments as f64;
            let v = f(t);
            if v.len() != dim || f0.len() != dim {
                return Err(Error::InvalidInput("function returned wrong dimension".into()));
            }
            values.extend(v.iter().zip(&f0).map(|(a, b)| a - b));
        }
        Self::from_values(dim, horizon, values)
    }

    pub fn zeros(dim: usize, horizon: f64, segments: usize) -> Self {
        Self {
            dim,
            horizon,
            values: vec![0.0; (segments.max(1) + 1) * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segments(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    /// `k` with `K = 2^k`, when the grid is dyadic.
    pub fn level(&self) -> Option<u32> {
        let k = self.segments();
        k.is_power_of_two().then(|| k.trailing_zeros())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let k = self.segments();
        (0..=k).map(|i| self.horizon * i as f64 / k as f64).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.value(self.segments())
    }

    pub fn increment(&self, i: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| self.values[(i + 1) * self.dim + j] - self.values[i * self.dim + j])
            .collect()
    }

    /// All increments, row-major `K x dim`.
    pub fn increments(&self) -> Vec<f64> {
        let k = self.segments();
        let mut out = Vec::with_capacity(k * self.dim);
        for i in 0..k {
            for j in 0..self.dim {
                out.push(self.values[(i + 1) * self.dim + j] - self.values[i * self.dim + j]);
            }
        }
        out
    }

    /// `Σ |Δh|² / Δt`.
    pub fn energy(&self) -> f64 {
        let dt = self.dt();
        self.increments().iter().map(|v| v * v).sum::<f64>() / dt
    }

    /// Linear interpolation at time `t ∈ [0, horizon]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let k = self.segments();
        let s = (t / self.horizon * k as f64).clamp(0.0, k as f64);
        let i = (s.floor() as usize).min(k - 1);
        let w = s - i as f64;
        (0..self.dim)
            .map(|j| (1.0 - w) * self.values[i * self.dim + j] + w * self.values[(i + 1) * self.dim + j])
            .collect()
    }

    /// Same path on a grid with `factor` times more segments (exact for piecewise-linear data).
    pub fn refine(&self, factor: usize) -> Self {
        let k = self.segments() * factor.max(1);
        let mut values = Vec::with_capacity((k + 1) * self.dim);
        for i in 0..=k {
            values.extend(self.eval(self.horizon * i as f64 / k as f64));
        }
        Self {
            dim: self.dim,
            horizon: self.horizon,
            values,
        }
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.segments() != other.segments() || self.horizon != other.horizon {
            return Err(Error::InvalidInput(format!(
                "grid mismatch: ({}, {}, {}) vs ({}, {}, {})",
                self.dim,
                self.segments(),
                self.horizon,
                other.dim,
                other.segments(),
                other.horizon
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            dim: self.dim,
            horizon: self.horizon,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            horizon: self.horizon,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Applies a `dim x dim` row-major matrix to every value.
    pub fn map_linear(&self, m: &[f64]) -> Self {
        let d = self.dim;
        let mut values = vec![0.0; self.values.len()];
        for (row, out) in self.values.chunks(d).zip(values.chunks_mut(d)) {
            for i in 0..d {
                out[i] = (0..d).map(|j| m[i * d + j] * row[j]).sum();
            }
        }
        Self {
            dim: d,
            horizon: self.horizon,
            values,
        }
    }

    /// `sup_i |h(t_i) - g(t_i)|` on a shared grid.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| crate::geometry::euclid(a, b))
            .fold(0.0, f64::max))
    }
}

/// Sequence of chart points on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasePath {
    n: usize,
    times: Vec<f64>,
    points: Vec<f64>,
}

impl BasePath {
    pub fn new(n: usize, times: Vec<f64>, points: Vec<f64>) -> Result<Self> {
        if n == 0 || times.len() < 2 || points.len() != times.len() * n {
            return Err(Error::InvalidInput(format!(
                "base path needs >= 2 times and n * len points (n = {n}, {} times, {} values)",
                times.len(),
                points.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("base path has non-finite points".into()));
        }
        Ok(Self { n, times, points })
    }

    /// Straight chart segment from `x` to `a` on `segments` uniform steps over `[0, 1]`.
    pub fn straight(x: &[f64], a: &[f64], segments: usize) -> Result<Self> {
        let k = segments.max(1);
        let times = (0..=k).map(|i| i as f64 / k as f64).collect::<Vec<_>>();
        let points = times
            .iter()
            .flat_map(|t| x.iter().zip(a).map(move |(p, q)| p + t * (q - p)))
            .collect();
        Self::new(x.len(), times, points)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn start(&self) -> &[f64] {
        self.point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    /// Linear interpolation in chart coordinates.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let ts = &self.times;
        let t = t.clamp(ts[0], ts[ts.len() - 1]);
        let i = match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.point(i).to_vec(),
            Err(i) => i.max(1) - 1,
        };
        let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
        self.point(i)
            .iter()
            .zip(self.point(i + 1))
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect()
    }
}
