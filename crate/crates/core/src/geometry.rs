//! Chart-based sub-Riemannian model geometries.
//!
//! A [`ManifoldModel`] carries a single global chart on which an orthonormal
//! frame `Z_1..Z_n` is given: the first `d` columns span the distribution `D`,
//! the remaining `n - d` span the chosen complement. The metric on `D` is the
//! one making `Z_1..Z_d` orthonormal. Alongside the frame a model supplies the
//! density of the reference volume and the connection symbols
//! `Γ^α_{βγ}` defined by `∇_{Z_γ} Z_β = Σ_α Γ^α_{βγ} Z_α`.
//!
//! Matrices crossing the evaluator boundary are flat row-major slices:
//! the frame is stored as `frame[k * n + j] = (Z_j)^k` and the connection as
//! `gamma[(α * n + β) * n + γ] = Γ^α_{βγ}` (all indices zero-based).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes the `n x n` row-major frame matrix at a chart point.
pub type FrameFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Scalar function on the chart.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes the `n^3` connection symbols at a chart point.
pub type ConnectionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a tangent vector (chart components) at a chart point.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes the exact bracket `[Z_i, Z_j](x)`.
pub type BracketFn = Arc<dyn Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync>;
/// Closed-form sub-Riemannian distance `d(x, a)`.
pub type DistanceOracle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Closed-form heat kernel `p_t(x, a)` of `Δ_sub / 2` with respect to the model volume.
pub type HeatKernelOracle = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// One-parameter isometry group fixing a centre: `(θ, centre, point) -> image`.
pub type SymmetryFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// A tangent vector in chart components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangentVector(pub Vec<f64>);

impl TangentVector {
    pub fn zeros(n: usize) -> Self {
        TangentVector(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Connection symbols of a model.
#[derive(Clone)]
pub enum Connection {
    /// `Γ ≡ 0`: the orthonormal frame is declared parallel.
    Zero,
    Field(ConnectionFn),
}

/// Quotient structure of the chart.
#[derive(Debug, Clone, PartialEq)]
pub enum Periodicity {
    None,
    /// Coordinate-wise periods; `None` entries are not periodic.
    Torus(Vec<Option<f64>>),
    /// Left quotient of the Heisenberg group (coordinates of the first kind,
    /// `(x,y,z)(x',y',z') = (x+x', y+y', z+z' + (xy' - yx')/2)`) by the lattice
    /// `{(a, b, c) : a, b ∈ Z, c ∈ Z/2}`.
    HeisenbergNil,
}

impl Periodicity {
    pub fn is_periodic(&self) -> bool {
        !matches!(self, Periodicity::None)
    }

    /// Canonical representative of `p` in the fundamental domain.
    pub fn reduce(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Periodicity::None => p.to_vec(),
            Periodicity::Torus(periods) => p
                .iter()
                .zip(periods)
                .map(|(&v, per)| match per {
                    Some(l) => v.rem_euclid(*l),
                    None => v,
                })
                .collect(),
            Periodicity::HeisenbergNil => {
                let a = -p[0].floor();
                let b = -p[1].floor();
                let q = nil_act(a, b, 0.0, p);
                let c = -(q[2] / 0.5).floor() * 0.5;
                vec![q[0], q[1], q[2] + c]
            }
        }
    }

    /// `p` together with its translates by the nearest shell of lattice elements.
    pub fn images(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Periodicity::None => vec![p.to_vec()],
            Periodicity::Torus(periods) => {
                let mut out = vec![p.to_vec()];
                for (k, per) in periods.iter().enumerate() {
                    if let Some(l) = per {
                        let mut next = Vec::with_capacity(out.len() * 3);
                        for q in &out {
                            for s in [-1.0, 1.0] {
                                let mut r = q.clone();
                                r[k] += s * l;
                                next.push(r);
                            }
                        }
                        out.extend(next);
                    }
                }
                out
            }
            Periodicity::HeisenbergNil => {
                let mut out = vec![p.to_vec()];
                for a in [-1.0, 0.0, 1.0] {
                    for b in [-1.0, 0.0, 1.0] {
                        for c in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                            if a == 0.0 && b == 0.0 && c == 0.0 {
                                continue;
                            }
                            out.push(nil_act(a, b, c, p));
                        }
                    }
                }
                out
            }
        }
    }

    /// Lattice-aware Euclidean chart distance.
    pub fn chart_distance(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            Periodicity::None => euclid(p, q),
            Periodicity::Torus(periods) => p
                .iter()
                .zip(q)
                .zip(periods)
                .map(|((a, b), per)| {
                    let mut diff = a - b;
                    if let Some(l) = per {
                        diff = diff.rem_euclid(*l);
                        if diff > 0.5 * l {
                            diff -= l;
                        }
                    }
                    diff * diff
                })
                .sum::<f64>()
                .sqrt(),
            Periodicity::HeisenbergNil => {
                let pr = self.reduce(p);
                let qr = self.reduce(q);
                self.images(&qr)
                    .iter()
                    .map(|img| euclid(&pr, img))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn nil_act(a: f64, b: f64, c: f64, p: &[f64]) -> Vec<f64> {
    vec![a + p[0], b + p[1], c + p[2] + 0.5 * (a * p[1] - b * p[0])]
}

pub(crate) fn euclid(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Closed-form data used by tests and acceptance runs.
#[derive(Clone, Default)]
pub struct Oracles {
    pub distance: Option<DistanceOracle>,
    pub heat_kernel: Option<HeatKernelOracle>,
    pub symmetry: Option<SymmetryFn>,
}

/// Exact replacements for finite-difference quantities.
#[derive(Clone, Default)]
pub struct ExactDerivatives {
    pub brackets: Option<BracketFn>,
    /// Writes `div Z_i` for all `i` at once.
    pub divergence: Option<VectorField>,
    /// The model guarantees `(Δ_sub - Δ̃)/2 ≡ 0`.
    pub zero_drift_correction: bool,
    /// The frame does not depend on the point.
    pub constant_frame: bool,
}

/// A sub-Riemannian geometry on a single chart.
#[derive(Clone)]
pub struct ManifoldModel {
    name: String,
    dim_n: usize,
    dim_d: usize,
    frame: FrameFn,
    vol_density: ScalarFn,
    connection: Connection,
    periodicity: Periodicity,
    exact: ExactDerivatives,
    oracles: Oracles,
}

impl fmt::Debug for ManifoldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManifoldModel")
            .field("name", &self.name)
            .field("dim_n", &self.dim_n)
            .field("dim_d", &self.dim_d)
            .field("periodicity", &self.periodicity)
            .field("zero_connection", &self.has_zero_connection())
            .finish()
    }
}

pub struct ModelBuilder {
    name: String,
    dim_n: usize,
    dim_d: usize,
    frame: Option<FrameFn>,
    vol_density: ScalarFn,
    connection: Connection,
    periodicity: Periodicity,
    exact: ExactDerivatives,
    oracles: Oracles,
}

impl ModelBuilder {
    pub fn frame(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.frame = Some(Arc::new(f));
        self
    }

    pub fn vol_density(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.vol_density = Arc::new(f);
        self
    }

    pub fn connection(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.connection = Connection::Field(Arc::new(f));
        self
    }

    pub fn periodicity(mut self, p: Periodicity) -> Self {
        self.periodicity = p;
        self
    }

    pub fn exact(mut self, exact: ExactDerivatives) -> Self {
        self.exact = exact;
        self
    }

    pub fn oracles(mut self, oracles: Oracles) -> Self {
        self.oracles = oracles;
        self
    }

    pub fn build(self) -> Result<ManifoldModel> {
        if self.dim_n == 0 || self.dim_d == 0 || self.dim_d > self.dim_n {
            return Err(Error::ModelDefinition(format!(
                "need 1 <= d <= n, got n = {}, d = {}",
                self.dim_n, self.dim_d
            )));
        }
        let frame = self
            .frame
            .ok_or_else(|| Error::ModelDefinition("no frame evaluator given".into()))?;
        match &self.periodicity {
            Periodicity::Torus(p) if p.len() != self.dim_n => {
                return Err(Error::ModelDefinition(format!(
                    "{} periods given for a {}-dimensional chart",
                    p.len(),
                    self.dim_n
                )))
            }
            Periodicity::Torus(p) if p.iter().flatten().any(|&l| !(l > 0.0)) => {
                return Err(Error::ModelDefinition("periods must be positive".into()))
            }
            Periodicity::HeisenbergNil if self.dim_n != 3 => {
                return Err(Error::ModelDefinition(
                    "the Heisenberg lattice quotient needs n = 3".into(),
                ))
            }
            _ => {}
        }
        Ok(ManifoldModel {
            name: self.name,
            dim_n: self.dim_n,
            dim_d: self.dim_d,
            frame,
            vol_density: self.vol_density,
            connection: self.connection,
            periodicity: self.periodicity,
            exact: self.exact,
            oracles: self.oracles,
        })
    }
}

/// Report of the bracket-generation check at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    /// Smallest bracket depth at which the span reaches `n`.
    pub depth_reached: Option<usize>,
    pub ranks_by_depth: Vec<usize>,
    pub full_rank: bool,
}

/// Tolerances used by [`ManifoldModel::validate`].
#[derive(Debug, Clone, Copy)]
pub struct ValidationTolerances {
    pub antisymmetry: f64,
    pub block: f64,
    /// Largest acceptable frame condition number.
    pub max_condition: f64,
    pub max_depth: usize,
    pub fd_step: f64,
}

impl Default for ValidationTolerances {
    fn default() -> Self {
        Self {
            antisymmetry: 1e-12,
            block: 1e-12,
            max_condition: 1e12,
            max_depth: 4,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check: &'static str,
    pub point: usize,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub n_points: usize,
    pub checks: Vec<CheckResult>,
    /// Largest Hörmander depth needed over the sampled points.
    pub hormander_depth: Option<usize>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// True when every check of the given kind passed.
    pub fn passed_check(&self, check: &str) -> bool {
        self.checks.iter().filter(|c| c.check == check).all(|c| c.passed)
    }
}

/// Node of an iterated Lie bracket of frame fields.
#[derive(Debug, Clone)]
enum BracketTerm {
    Frame(usize),
    Bracket(Box<BracketTerm>, Box<BracketTerm>),
}

impl ManifoldModel {
    pub fn builder(name: impl Into<String>, dim_n: usize, dim_d: usize) -> ModelBuilder {
        ModelBuilder {
            name: name.into(),
            dim_n,
            dim_d,
            frame: None,
            vol_density: Arc::new(|_| 1.0),
            connection: Connection::Zero,
            periodicity: Periodicity::None,
            exact: ExactDerivatives::default(),
            oracles: Oracles::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn periodicity(&self) -> &Periodicity {
        &self.periodicity
    }

    pub fn oracles(&self) -> &Oracles {
        &self.oracles
    }

    pub fn connection(&self) -> &Connection {
        &self.connection
    }

    pub fn has_zero_connection(&self) -> bool {
        matches!(self.connection, Connection::Zero)
    }

    pub fn has_zero_drift_correction(&self) -> bool {
        self.exact.zero_drift_correction
    }

    pub fn has_constant_frame(&self) -> bool {
        self.exact.constant_frame
    }

    /// Returns a copy with a different connection (same frame and volume).
    pub fn with_connection(&self, name: impl Into<String>, connection: Connection) -> Self {
        let mut m = self.clone();
        m.name = name.into();
        m.connection = connection;
        m.exact.zero_drift_correction = false;
        m
    }

    pub fn vol_density(&self, x: &[f64]) -> f64 {
        (self.vol_density)(x)
    }

    pub fn chart_distance(&self, p: &[f64], q: &[f64]) -> f64 {
        self.periodicity.chart_distance(p, q)
    }

    /// Raw frame evaluation into a caller buffer, without checks.
    #[inline]
    pub fn frame_into(&self, x: &[f64], out: &mut [f64]) {
        (self.frame)(x, out)
    }

    /// Raw connection evaluation; leaves `out` zeroed for `Γ ≡ 0`.
    #[inline]
    pub fn connection_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.connection {
            Connection::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Connection::Field(f) => f(x, out),
        }
    }

    /// `Γ^α_{βγ}(x)` with zero-based indices.
    pub fn christoffel(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim_n;
        let mut g = vec![0.0; n * n * n];
        self.connection_into(x, &mut g);
        g
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_n {
            return Err(Error::InvalidInput(format!(
                "point has {} coordinates, model {} has n = {}",
                x.len(),
                self.name,
                self.dim_n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite point {x:?}")));
        }
        Ok(())
    }

    /// The frame matrix at `x` (column `j` is `Z_{j+1}(x)`), checked for invertibility.
    pub fn eval_frame(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let n = self.dim_n;
        let mut buf = vec![0.0; n * n];
        self.frame_into(x, &mut buf);
        let m = DMatrix::from_row_slice(n, n, &buf);
        let sv = m.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin.is_finite() && smax.is_finite()) || smin <= 1e-12 * smax.max(1e-300) {
            return Err(Error::SingularFrame {
                point: x.to_vec(),
                sigma_min: smin,
            });
        }
        Ok(m)
    }

    /// Frame coefficients `c` with `v = Σ c_γ Z_γ(x)`.
    pub fn frame_coordinates(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let f = self.eval_frame(x)?;
        let c = f
            .lu()
            .solve(&DVector::from_column_slice(v))
            .ok_or_else(|| Error::SingularFrame {
                point: x.to_vec(),
                sigma_min: 0.0,
            })?;
        Ok(c.iter().copied().collect())
    }

    fn frame_column(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let n = self.dim_n;
        let mut buf = vec![0.0; n * n];
        self.frame_into(x, &mut buf);
        (0..n).map(|k| buf[k * n + j]).collect()
    }

    fn eval_term(&self, term: &BracketTerm, x: &[f64], h: f64) -> Vec<f64> {
        match term {
            BracketTerm::Frame(j) => self.frame_column(*j, x),
            BracketTerm::Bracket(a, b) => {
                if let (BracketTerm::Frame(i), BracketTerm::Frame(j), Some(exact)) =
                    (a.as_ref(), b.as_ref(), &self.exact.brackets)
                {
                    let mut out = vec![0.0; self.dim_n];
                    exact(*i, *j, x, &mut out);
                    return out;
                }
                let va = self.eval_term(a, x, h);
                let vb = self.eval_term(b, x, h);
                let db_va = self.directional(b, x, &va, h);
                let da_vb = self.directional(a, x, &vb, h);
                db_va.iter().zip(&da_vb).map(|(p, q)| p - q).collect()
            }
        }
    }

    /// Central difference of a bracket term along `v`.
    fn directional(&self, term: &BracketTerm, x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let fp = self.eval_term(term, &xp, h);
        let fm = self.eval_term(term, &xm, h);
        fp.iter().zip(&fm).map(|(p, q)| (p - q) / (2.0 * h)).collect()
    }

    /// `[Z_i, Z_j](x)` (zero-based indices), exact when the model ships brackets.
    pub fn bracket(&self, i: usize, j: usize, x: &[f64], fd_step: f64) -> Result<TangentVector> {
        self.check_point(x)?;
        let n = self.dim_n;
        if i >= n || j >= n {
            return Err(Error::InvalidInput(format!(
                "bracket indices ({i}, {j}) out of range for n = {n}"
            )));
        }
        if !(fd_step > 0.0) {
            return Err(Error::InvalidInput("fd_step must be positive".into()));
        }
        if i == j {
            return Ok(TangentVector::zeros(n));
        }
        let term = BracketTerm::Bracket(Box::new(BracketTerm::Frame(i)), Box::new(BracketTerm::Frame(j)));
        Ok(TangentVector(self.eval_term(&term, x, fd_step)))
    }

    /// Rank of `Lie^{(k)}(Z_1..Z_d)(x)` for `k = 1..max_depth`.
    pub fn hormander_rank(&self, x: &[f64], max_depth: usize, fd_step: f64) -> Result<RankReport> {
        self.check_point(x)?;
        if max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        let n = self.dim_n;
        let mut layer: Vec<BracketTerm> = (0..self.dim_d).map(BracketTerm::Frame).collect();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut ranks = Vec::new();
        let mut depth_reached = None;
        for depth in 1..=max_depth {
            if depth > 1 {
                let mut next = Vec::with_capacity(layer.len() * self.dim_d);
                for i in 0..self.dim_d {
                    for y in &layer {
                        next.push(BracketTerm::Bracket(
                            Box::new(BracketTerm::Frame(i)),
                            Box::new(y.clone()),
                        ));
                    }
                }
                layer = next;
            }
            for term in &layer {
                vectors.push(self.eval_term(term, x, fd_step));
            }
            let rank = numeric_rank(n, &vectors);
            ranks.push(rank);
            if rank == n {
                depth_reached = Some(depth);
                break;
            }
        }
        let rank = *ranks.last().unwrap_or(&0);
        Ok(RankReport {
            rank,
            depth_reached,
            ranks_by_depth: ranks,
            full_rank: rank == n,
        })
    }

    /// `div Z_i` with respect to the model volume (zero-based `i`).
    pub fn divergence(&self, i: usize, x: &[f64], fd_step: f64) -> Result<f64> {
        self.check_point(x)?;
        if i >= self.dim_n {
            return Err(Error::InvalidInput(format!("field index {i} out of range")));
        }
        if let Some(div) = &self.exact.divergence {
            let mut out = vec![0.0; self.dim_n];
            div(x, &mut out);
            return Ok(out[i]);
        }
        Ok(self.divergence_fd(i, x, fd_step))
    }

    fn divergence_fd(&self, i: usize, x: &[f64], h: f64) -> f64 {
        let n = self.dim_n;
        let rho = self.vol_density(x);
        let mut acc = 0.0;
        let mut xp = x.to_vec();
        for k in 0..n {
            xp[k] = x[k] + h;
            let fp = self.vol_density(&xp) * self.frame_column(i, &xp)[k];
            xp[k] = x[k] - h;
            let fm = self.vol_density(&xp) * self.frame_column(i, &xp)[k];
            xp[k] = x[k];
            acc += (fp - fm) / (2.0 * h);
        }
        acc / rho
    }

    /// The vector field `(Δ_sub - Δ̃)/2` at `x`:
    /// `½ [Σ_i (div Z_i) Z_i - Σ_{i,j} Γ^j_{ij} Z_i]`, sums over `1..d`.
    pub fn drift_correction(&self, x: &[f64], fd_step: f64) -> Result<TangentVector> {
        self.check_point(x)?;
        let n = self.dim_n;
        let d = self.dim_d;
        if self.exact.zero_drift_correction {
            return Ok(TangentVector::zeros(n));
        }
        let mut frame = vec![0.0; n * n];
        self.frame_into(x, &mut frame);
        let gamma = self.christoffel(x);
        let mut coeff = vec![0.0; d];
        for (i, c) in coeff.iter_mut().enumerate() {
            let mut v = self.divergence(i, x, fd_step)?;
            for j in 0..d {
                v -= gamma[(j * n + i) * n + j];
            }
            *c = 0.5 * v;
        }
        let mut out = vec![0.0; n];
        for (k, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|i| frame[k * n + i] * coeff[i]).sum();
        }
        Ok(TangentVector(out))
    }

    /// Frame coefficients of the drift correction: `out[i] = ½ (div Z_i - Σ_j Γ^j_{ij})`
    /// for `i < d`, zero otherwise. `gamma` must hold the symbols at `x`.
    pub(crate) fn correction_coeffs_into(&self, x: &[f64], gamma: &[f64], fd_step: f64, out: &mut [f64]) {
        let n = self.dim_n;
        let d = self.dim_d;
        if self.exact.zero_drift_correction {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        match &self.exact.divergence {
            Some(div) => div(x, out),
            None => {
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    *o = self.divergence_fd(i, x, fd_step);
                }
            }
        }
        let zero_conn = self.has_zero_connection();
        for i in 0..n {
            if i >= d {
                out[i] = 0.0;
                continue;
            }
            let mut v = out[i];
            if !zero_conn {
                for j in 0..d {
                    v -= gamma[(j * n + i) * n + j];
                }
            }
            out[i] = 0.5 * v;
        }
    }

    /// `Z_i f(x)` by a central difference along `Z_i(x)`.
    fn frame_derivative(&self, i: usize, f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> f64 {
        let z = self.frame_column(i, x);
        let xp: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - h * b).collect();
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    /// `V f(x)` for a chart vector `v` at `x`.
    pub(crate) fn vector_derivative(f: &dyn Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    /// `Δ_sub f(x) = Σ_i [Z_i² f + (div Z_i) Z_i f]` by nested central differences.
    pub fn apply_sub_laplacian(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64], fd_step: f64) -> Result<f64> {
        self.check_point(x)?;
        let h = fd_step;
        let mut acc = 0.0;
        for i in 0..self.dim_d {
            let zf = |y: &[f64]| self.frame_derivative(i, f, y, h);
            let z2f = self.frame_derivative(i, &zf, x, h);
            let div = self.divergence(i, x, h)?;
            acc += z2f + div * zf(x);
        }
        Ok(acc)
    }

    /// `Δ̃ f(x) = Δ_sub f(x) - 2 (drift correction) f(x)`.
    pub fn apply_connection_laplacian(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64], fd_step: f64) -> Result<f64> {
        let lap = self.apply_sub_laplacian(f, x, fd_step)?;
        let corr = self.drift_correction(x, fd_step)?;
        Ok(lap - 2.0 * Self::vector_derivative(f, x, &corr.0, fd_step))
    }

    /// Runs frame invertibility, volume positivity, connection antisymmetry and
    /// block-pattern checks, and the bracket-generation check at each sample point.
    pub fn validate(&self, points: &[Vec<f64>], tol: &ValidationTolerances) -> ValidationReport {
        let n = self.dim_n;
        let d = self.dim_d;
        let mut checks = Vec::new();
        let mut depth: Option<usize> = Some(0);
        for (pi, x) in points.iter().enumerate() {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                checks.push(CheckResult {
                    check: "point",
                    point: pi,
                    passed: false,
                    value: f64::NAN,
                    detail: format!("invalid sample point {x:?}"),
                });
                continue;
            }
            let frame_ok = match self.eval_frame(x) {
                Ok(m) => {
                    let sv = m.singular_values();
                    let cond = sv.max() / sv.min();
                    let ok = cond.is_finite() && cond <= tol.max_condition;
                    checks.push(CheckResult {
                        check: "frame_invertible",
                        point: pi,
                        passed: ok,
                        value: cond,
                        detail: format!("condition number {cond:e}"),
                    });
                    ok
                }
                Err(e) => {
                    checks.push(CheckResult {
                        check: "frame_invertible",
                        point: pi,
                        passed: false,
                        value: f64::INFINITY,
                        detail: e.to_string(),
                    });
                    false
                }
            };
            let rho = self.vol_density(x);
            checks.push(CheckResult {
                check: "vol_density_positive",
                point: pi,
                passed: rho.is_finite() && rho > 0.0,
                value: rho,
                detail: format!("density {rho}"),
            });

            let g = self.christoffel(x);
            let mut asym: f64 = 0.0;
            let mut block: f64 = 0.0;
            let mut finite = true;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let v = g[(a * n + b) * n + c];
                        let w = g[(b * n + a) * n + c];
                        finite &= v.is_finite();
                        asym = asym.max((v + w).abs());
                        if (a < d) != (b < d) {
                            block = block.max(v.abs());
                        }
                    }
                }
            }
            checks.push(CheckResult {
                check: "connection_antisymmetry",
                point: pi,
                passed: finite && asym <= tol.antisymmetry,
                value: asym,
                detail: format!("max |Γ^a_bc + Γ^b_ac| = {asym:e}"),
            });
            checks.push(CheckResult {
                check: "connection_block",
                point: pi,
                passed: finite && block <= tol.block,
                value: block,
                detail: format!("max |Γ| on the off-diagonal blocks = {block:e}"),
            });

            if frame_ok {
                match self.hormander_rank(x, tol.max_depth, tol.fd_step) {
                    Ok(r) => {
                        depth = match (depth, r.depth_reached) {
                            (Some(a), Some(b)) => Some(a.max(b)),
                            _ => None,
                        };
                        checks.push(CheckResult {
                            check: "hormander",
                            point: pi,
                            passed: r.full_rank,
                            value: r.rank as f64,
                            detail: format!("rank {} of {} (ranks by depth {:?})", r.rank, n, r.ranks_by_depth),
                        });
                    }
                    Err(e) => {
                        depth = None;
                        checks.push(CheckResult {
                            check: "hormander",
                            point: pi,
                            passed: false,
                            value: 0.0,
                            detail: e.to_string(),
                        });
                    }
                }
            } else {
                depth = None;
            }
        }
        ValidationReport {
            model: self.name.clone(),
            n_points: points.len(),
            checks,
            hormander_depth: depth.filter(|&k| k > 0),
        }
    }
}

/// Rank of a set of vectors via singular values with threshold `RANK_TOL * σ_max`.
pub fn numeric_rank(n: usize, vectors: &[Vec<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
    let sv = m.singular_values();
    let smax = sv.max();
    if !(smax > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn heisenberg_frame_values() {
        let m = models::heisenberg();
        let f = m.eval_frame(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f, DMatrix::identity(3, 3));
        let f = m.eval_frame(&[1.0, 2.0, 0.0]).unwrap();
        assert_eq!(f.column(0).as_slice(), &[1.0, 0.0, -1.0]);
        assert_eq!(f.column(1).as_slice(), &[0.0, 1.0, 0.5]);
        assert_eq!(f.column(2).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn flat_frame_is_identity() {
        let m = models::flat_torus(2, 10.0);
        let f = m.eval_frame(&[3.3, -7.1]).unwrap();
        assert_eq!(f, DMatrix::identity(2, 2));
    }

    #[test]
    fn singular_frame_is_rejected() {
        let m = ManifoldModel::builder("degenerate", 2, 1)
            .frame(|x, out| {
                out.copy_from_slice(&[1.0, x[0], 0.0, 0.0]);
            })
            .build()
            .unwrap();
        let err = m.eval_frame(&[0.0, 0.0]).unwrap_err();
        assert_eq!(err.code(), "geometry.singular_frame");
    }

    #[test]
    fn heisenberg_bracket_numeric_matches_symbolic() {
        // Strip the exact brackets to exercise the finite-difference path.
        let m = models::heisenberg_without_exact();
        for x in [[0.0, 0.0, 0.0], [1.3, -0.4, 2.0], [-3.0, 5.0, 1.0]] {
            let b = m.bracket(0, 1, &x, 1e-4).unwrap();
            assert!((b.0[0]).abs() < 1e-9 && (b.0[1]).abs() < 1e-9);
            assert!((b.0[2] - 1.0).abs() < 1e-8, "{:?}", b);
            let exact = models::heisenberg().bracket(0, 1, &x, 1e-4).unwrap();
            assert_eq!(exact.0, vec![0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let m = models::heisenberg_without_exact();
        assert_eq!(m.bracket(1, 1, &[0.2, 0.3, 0.4], 1e-4).unwrap().0, vec![0.0; 3]);
    }

    #[test]
    fn flat_brackets_vanish() {
        let m = models::flat_torus(2, 10.0);
        let b = m.bracket(0, 1, &[0.5, 0.5], 1e-4).unwrap();
        assert_eq!(b.0, vec![0.0, 0.0]);
    }

    #[test]
    fn hormander_ranks() {
        let h = models::heisenberg_without_exact();
        let r = h.hormander_rank(&[0.7, -1.1, 0.3], 2, 1e-4).unwrap();
        assert_eq!(r.rank, 3);
        assert_eq!(r.depth_reached, Some(2));
        let r = h.hormander_rank(&[0.7, -1.1, 0.3], 1, 1e-4).unwrap();
        assert_eq!(r.rank, 2);
        assert!(!r.full_rank);
        assert_eq!(r.depth_reached, None);
        let flat = models::flat_torus(2, 10.0);
        let r = flat.hormander_rank(&[1.0, 2.0], 3, 1e-4).unwrap();
        assert_eq!((r.rank, r.depth_reached), (2, Some(1)));
        assert!(h.hormander_rank(&[0.0; 3], 0, 1e-4).is_err());
    }

    #[test]
    fn divergences() {
        let h = models::heisenberg_without_exact();
        assert!(h.divergence(0, &[0.3, 0.8, -0.2], 1e-4).unwrap().abs() < 1e-10);
        let flat = models::flat_torus(2, 10.0);
        assert_eq!(flat.divergence(1, &[0.3, 0.8], 1e-4).unwrap(), 0.0);
        // density e^{x^1}: div Z_1 = 1, div Z_2 = 0
        let w = models::weighted_plane_without_exact();
        let d1 = w.divergence(0, &[0.4, -0.3], 1e-4).unwrap();
        assert!((d1 - 1.0).abs() < 1e-8, "{d1}");
        assert!(w.divergence(1, &[0.4, -0.3], 1e-4).unwrap().abs() < 1e-10);
    }

    #[test]
    fn drift_corrections() {
        let x = [0.3, -0.2, 0.9];
        assert_eq!(models::heisenberg().drift_correction(&x, 1e-4).unwrap().0, vec![0.0; 3]);
        assert!(
            models::heisenberg_without_exact()
                .drift_correction(&x, 1e-4)
                .unwrap()
                .norm()
                < 1e-10
        );
        assert_eq!(
            models::flat_torus(2, 10.0)
                .drift_correction(&[1.0, 1.0], 1e-4)
                .unwrap()
                .0,
            vec![0.0; 2]
        );
        // div Z_1 = 1, Γ ≡ 0 -> Z_1 / 2
        let w = models::weighted_plane();
        let v = w.drift_correction(&[0.4, 0.1], 1e-4).unwrap();
        assert!((v.0[0] - 0.5).abs() < 1e-12 && v.0[1].abs() < 1e-12);
        let w = models::weighted_plane_without_exact();
        let v = w.drift_correction(&[0.4, 0.1], 1e-4).unwrap();
        assert!((v.0[0] - 0.5).abs() < 1e-8 && v.0[1].abs() < 1e-10);
    }

    #[test]
    fn twisted_drift_correction_uses_connection() {
        // Γ^1_{21} = 1, Γ^1_{22} = κ(x): correction = ½ (κ Z_1 - Z_2)
        let m = models::heisenberg_twisted();
        let x = [0.2, 0.7, -0.1];
        let v = m.drift_correction(&x, 1e-4).unwrap();
        let kappa = models::twist_kappa(&x);
        let f = m.eval_frame(&x).unwrap();
        for k in 0..3 {
            let expect = 0.5 * (kappa * f[(k, 0)] - f[(k, 1)]);
            assert!((v.0[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sub_laplacian_flat() {
        let m = models::flat_torus(1, 20.0);
        let f = |x: &[f64]| x[0].sin();
        assert!(m.apply_sub_laplacian(&f, &[0.0], 1e-4).unwrap().abs() < 1e-8);
        let v = m.apply_sub_laplacian(&f, &[std::f64::consts::FRAC_PI_2], 1e-4).unwrap();
        assert!((v + 1.0).abs() < 1e-6, "{v}");
        let c = |_: &[f64]| 3.0;
        assert_eq!(m.apply_sub_laplacian(&c, &[0.4], 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn sub_laplacian_heisenberg_polynomial() {
        // Z_1^2 + Z_2^2 applied to z: Z_1 z = -y/2, Z_1^2 z = 0; likewise for Z_2.
        // Applied to x^2 + y^2: 2 + 2 = 4.
        let m = models::heisenberg();
        let f = |p: &[f64]| p[0] * p[0] + p[1] * p[1];
        let v = m.apply_sub_laplacian(&f, &[0.3, 0.4, 0.1], 1e-3).unwrap();
        assert!((v - 4.0).abs() < 1e-6);
        let g = |p: &[f64]| p[2];
        assert!(m.apply_sub_laplacian(&g, &[0.3, 0.4, 0.1], 1e-3).unwrap().abs() < 1e-8);
    }

    #[test]
    fn validation_of_builtins() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = i as f64;
                vec![(s * 0.37).sin() * 3.0, (s * 0.91).cos() * 2.0, s * 0.1 - 1.0]
            })
            .collect();
        let rep = models::heisenberg().validate(&pts, &ValidationTolerances::default());
        assert!(rep.passed(), "{:?}", rep.failures().collect::<Vec<_>>());
        assert_eq!(rep.hormander_depth, Some(2));
        let rep = models::heisenberg_twisted().validate(&pts, &ValidationTolerances::default());
        assert!(rep.passed());
        let flat = models::flat_torus(2, 10.0);
        let rep = flat.validate(&[vec![0.0, 0.0], vec![1.0, 4.0]], &ValidationTolerances::default());
        assert!(rep.passed());
        assert_eq!(rep.hormander_depth, Some(1));
    }

    #[test]
    fn validation_detects_symmetric_connection() {
        let m = models::heisenberg().with_connection(
            "bad",
            Connection::Field(Arc::new(|_x, g| {
                g.iter_mut().for_each(|v| *v = 0.0);
                // Γ^1_{2,1} = Γ^2_{1,1} = 1 (zero-based: [0][1][0] and [1][0][0])
                g[3] = 1.0;
                g[9] = 1.0;
            })),
        );
        let rep = m.validate(&[vec![0.0; 3]], &ValidationTolerances::default());
        assert!(!rep.passed_check("connection_antisymmetry"));
        assert!(rep.passed_check("connection_block"));
    }

    #[test]
    fn validation_detects_block_violation_and_bad_points() {
        let m = models::heisenberg().with_connection(
            "bad-block",
            Connection::Field(Arc::new(|_x, g| {
                g.iter_mut().for_each(|v| *v = 0.0);
                g[6] = 1.0; // Γ^1_{3,1}
                g[(2 * 3) * 3] = -1.0; // Γ^3_{1,1}
            })),
        );
        let rep = m.validate(
            &[vec![0.0; 3], vec![f64::NAN, 0.0, 0.0]],
            &ValidationTolerances::default(),
        );
        assert!(rep.passed_check("connection_antisymmetry"));
        assert!(!rep.passed_check("connection_block"));
        assert!(!rep.passed_check("point"));
    }

    #[test]
    fn torus_distance_wraps() {
        let p = Periodicity::Torus(vec![Some(10.0), None]);
        assert!((p.chart_distance(&[0.5, 0.0], &[9.5, 0.0]) - 1.0).abs() < 1e-12);
        assert!((p.chart_distance(&[0.0, 0.0], &[0.0, 12.0]) - 12.0).abs() < 1e-12);
        assert_eq!(p.images(&[1.0, 1.0]).len(), 3);
    }

    #[test]
    fn nil_reduction_and_distance() {
        let p = Periodicity::HeisenbergNil;
        let q = [2.3, -0.4, 0.7];
        let r = p.reduce(&q);
        assert!((0.0..1.0).contains(&r[0]) && (0.0..1.0).contains(&r[1]));
        assert!((0.0..0.5).contains(&r[2]));
        assert!(p.chart_distance(&q, &r) < 1e-12);
        // translate by a lattice element: distance zero
        let moved = nil_act(1.0, 2.0, 0.5, &q);
        assert!(p.chart_distance(&q, &moved) < 1e-12);
    }
}
