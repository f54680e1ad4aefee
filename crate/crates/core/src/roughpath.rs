//! Level-2 geometric rough paths over piecewise-linear data.
//!
//! A [`Level2Path`] stores one `(w¹, w²)` pair per grid cell together with
//! prefix values `w_{0,t_i}`, so any grid increment `w_{s,t}` comes from one
//! Chen division in `O(d²)`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::PiecewiseLinearPath;
use crate::stats;
use crate::stochastics::{sample_brownian, stream_rng};

/// `(w¹, w²)` over one interval; `level2` is row-major `d x d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Increment {
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
}

impl Increment {
    pub fn zero(dim: usize) -> Self {
        Self {
            level1: vec![0.0; dim],
            level2: vec![0.0; dim * dim],
        }
    }

    /// Lift of a straight segment with displacement `delta`: `(Δ, ½ Δ⊗Δ)`.
    pub fn linear(delta: &[f64]) -> Self {
        let d = delta.len();
        let mut level2 = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                level2[i * d + j] = 0.5 * delta[i] * delta[j];
            }
        }
        Self {
            level1: delta.to_vec(),
            level2,
        }
    }

    pub fn dim(&self) -> usize {
        self.level1.len()
    }

    /// `max |Sym(w²) - ½ w¹⊗w¹|`.
    pub fn geometricity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (self.level2[i * d + j] + self.level2[j * d + i]);
                worst = worst.max((sym - 0.5 * self.level1[i] * self.level1[j]).abs());
            }
        }
        worst
    }

    /// Max-abs difference over both levels.
    pub fn max_diff(&self, other: &Self) -> f64 {
        self.level1
            .iter()
            .zip(&other.level1)
            .chain(self.level2.iter().zip(&other.level2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Chen product: `a` over `[s,u]` and `b` over `[u,t]` give the value over `[s,t]`.
pub fn chen_combine(a: &Increment, b: &Increment) -> Result<Increment> {
    let d = a.dim();
    if b.dim() != d || a.level2.len() != d * d || b.level2.len() != d * d {
        return Err(Error::InvalidInput("chen_combine: dimension mismatch".into()));
    }
    let mut out = Increment::zero(d);
    for i in 0..d {
        out.level1[i] = a.level1[i] + b.level1[i];
        for j in 0..d {
            out.level2[i * d + j] = a.level2[i * d + j] + b.level2[i * d + j] + a.level1[i] * b.level1[j];
        }
    }
    Ok(out)
}

/// Level-2 rough path on the uniform grid `t_i = T i / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Level2Path {
    dim: usize,
    horizon: f64,
    level1: Vec<f64>,
    level2: Vec<f64>,
    prefix1: Vec<f64>,
    prefix2: Vec<f64>,
}

impl Level2Path {
    /// Builds a path from per-cell data (`K x d` and `K x d x d`, row-major).
    pub fn from_cells(dim: usize, horizon: f64, level1: Vec<f64>, level2: Vec<f64>) -> Result<Self> {
        if dim == 0 || level1.is_empty() || !level1.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput("level-1 data must form whole rows".into()));
        }
        let k = level1.len() / dim;
        if level2.len() != k * dim * dim {
            return Err(Error::InvalidInput(format!(
                "level-2 data has {} entries, expected {}",
                level2.len(),
                k * dim * dim
            )));
        }
        if !(horizon > 0.0) || level1.iter().chain(&level2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "rough path data must be finite on a positive horizon".into(),
            ));
        }
        let dd = dim * dim;
        let mut prefix1 = vec![0.0; (k + 1) * dim];
        let mut prefix2 = vec![0.0; (k + 1) * dd];
        for c in 0..k {
            for i in 0..dim {
                prefix1[(c + 1) * dim + i] = prefix1[c * dim + i] + level1[c * dim + i];
                for j in 0..dim {
                    prefix2[(c + 1) * dd + i * dim + j] = prefix2[c * dd + i * dim + j]
                        + level2[c * dd + i * dim + j]
                        + prefix1[c * dim + i] * level1[c * dim + j];
                }
            }
        }
        Ok(Self {
            dim,
            horizon,
            level1,
            level2,
            prefix1,
            prefix2,
        })
    }

    pub fn zero(dim: usize, horizon: f64, cells: usize) -> Self {
        let k = cells.max(1);
        Self::from_cells(dim, horizon, vec![0.0; k * dim], vec![0.0; k * dim * dim]).expect("zero path is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.level1.len() / self.dim
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.cells() as f64
    }

    pub fn cell(&self, c: usize) -> Increment {
        let (d, dd) = (self.dim, self.dim * self.dim);
        Increment {
            level1: self.level1[c * d..(c + 1) * d].to_vec(),
            level2: self.level2[c * dd..(c + 1) * dd].to_vec(),
        }
    }

    /// `w_{t_i, t_j}` for `i ≤ j`, from the prefix values.
    pub fn increment(&self, i: usize, j: usize) -> Increment {
        let mut out = Increment::zero(self.dim);
        self.increment_into(i, j, &mut out.level1, &mut out.level2);
        out
    }

    fn increment_into(&self, i: usize, j: usize, l1: &mut [f64], l2: &mut [f64]) {
        let (d, dd) = (self.dim, self.dim * self.dim);
        let (p1i, p1j) = (&self.prefix1[i * d..(i + 1) * d], &self.prefix1[j * d..(j + 1) * d]);
        let (p2i, p2j) = (&self.prefix2[i * dd..(i + 1) * dd], &self.prefix2[j * dd..(j + 1) * dd]);
        for a in 0..d {
            l1[a] = p1j[a] - p1i[a];
        }
        for a in 0..d {
            for b in 0..d {
                l2[a * d + b] = p2j[a * d + b] - p2i[a * d + b] - p1i[a] * l1[b];
            }
        }
    }

    /// `w_{t_i, t_j}` by folding [`chen_combine`] over the cells; an
    /// independent route for checking [`Level2Path::increment`].
    pub fn increment_direct(&self, i: usize, j: usize) -> Increment {
        (i..j).fold(Increment::zero(self.dim), |acc, c| {
            chen_combine(&acc, &self.cell(c)).expect("cells share the path dimension")
        })
    }

    /// Worst per-cell geometricity defect.
    pub fn geometricity_defect(&self) -> f64 {
        (0..self.cells())
            .map(|c| self.cell(c).geometricity_defect())
            .fold(0.0, f64::max)
    }

    /// Splits every cell into `factor` straight pieces. The antisymmetric part
    /// of each cell is shared equally, so all coarse increments are unchanged.
    pub fn refine(&self, factor: usize) -> Self {
        let r = factor.max(1);
        if r == 1 {
            return self.clone();
        }
        let (d, dd) = (self.dim, self.dim * self.dim);
        let k = self.cells();
        let mut level1 = Vec::with_capacity(k * r * d);
        let mut level2 = Vec::with_capacity(k * r * dd);
        for c in 0..k {
            let cell = self.cell(c);
            let piece: Vec<f64> = cell.level1.iter().map(|v| v / r as f64).collect();
            let lin = Increment::linear(&piece);
            let mut sub = vec![0.0; dd];
            for a in 0..d {
                for b in 0..d {
                    let anti = 0.5 * (cell.level2[a * d + b] - cell.level2[b * d + a]);
                    sub[a * d + b] = lin.level2[a * d + b] + anti / r as f64;
                }
            }
            for _ in 0..r {
                level1.extend_from_slice(&piece);
                level2.extend_from_slice(&sub);
            }
        }
        Self::from_cells(d, self.horizon, level1, level2).expect("refinement keeps data finite")
    }

    /// Per-cell CSV dump: `cell,t0,t1,w1_1..,w2_11..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["cell".to_string(), "t0".into(), "t1".into()];
        header.extend((1..=d).map(|i| format!("w1_{i}")));
        for i in 1..=d {
            header.extend((1..=d).map(|j| format!("w2_{i}{j}")));
        }
        out.write_record(&header)?;
        let dt = self.dt();
        for c in 0..self.cells() {
            let cell = self.cell(c);
            let mut row = vec![
                c.to_string(),
                format!("{}", c as f64 * dt),
                format!("{}", (c + 1) as f64 * dt),
            ];
            row.extend(cell.level1.iter().chain(&cell.level2).map(|v| format!("{v}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Natural lift of a piecewise-linear path: each cell is `(Δw, ½ Δw⊗Δw)`.
pub fn lift_dyadic(w: &PiecewiseLinearPath) -> Level2Path {
    let d = w.dim();
    let inc = w.increments();
    let mut level2 = Vec::with_capacity(inc.len() * d);
    for row in inc.chunks(d) {
        level2.extend(Increment::linear(row).level2);
    }
    Level2Path::from_cells(d, w.horizon(), inc, level2).expect("finite path gives a finite lift")
}

/// Grid factor bringing `a` cells and `b` cells to a common grid.
fn common_cells(a: usize, b: usize) -> Option<usize> {
    if a.is_multiple_of(b) {
        Some(a)
    } else if b.is_multiple_of(a) {
        Some(b)
    } else {
        None
    }
}

/// Young translation `τ_h(p)`. Each cell gains `Δh` at level one and
/// `½(Δw⊗Δh + Δh⊗Δw) + ½ Δh⊗Δh` at level two, which is exact when `w` and
/// `h` are both straight on the cell. Grids are refined to a common one.
pub fn translate(p: &Level2Path, h: &PiecewiseLinearPath) -> Result<Level2Path> {
    if h.dim() != p.dim() || h.horizon() != p.horizon() {
        return Err(Error::InvalidInput(format!(
            "translate: path lives in R^{} on [0,{}], control in R^{} on [0,{}]",
            p.dim(),
            p.horizon(),
            h.dim(),
            h.horizon()
        )));
    }
    let k = common_cells(p.cells(), h.segments()).ok_or_else(|| {
        Error::InvalidInput(format!(
            "translate: grids with {} and {} cells have no common refinement",
            p.cells(),
            h.segments()
        ))
    })?;
    let p = p.refine(k / p.cells());
    let h = h.refine(k / h.segments());
    let (d, dd) = (p.dim, p.dim * p.dim);
    let dh = h.increments();
    let mut level1 = p.level1.clone();
    let mut level2 = p.level2.clone();
    for c in 0..k {
        let dw = &p.level1[c * d..(c + 1) * d];
        let dhc = &dh[c * d..(c + 1) * d];
        for a in 0..d {
            level1[c * d + a] += dhc[a];
            for b in 0..d {
                level2[c * dd + a * d + b] += 0.5 * (dw[a] * dhc[b] + dhc[a] * dw[b]) + 0.5 * dhc[a] * dhc[b];
            }
        }
    }
    Level2Path::from_cells(d, p.horizon, level1, level2)
}

/// Dilation `(w¹, w²) ↦ (c w¹, c² w²)`.
pub fn dilate(p: &Level2Path, c: f64) -> Level2Path {
    Level2Path::from_cells(
        p.dim,
        p.horizon,
        p.level1.iter().map(|v| c * v).collect(),
        p.level2.iter().map(|v| c * c * v).collect(),
    )
    .expect("dilation of finite data by a finite factor is finite")
}

/// Exponent pair `(α, 4m)` of the Besov norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesovConfig {
    alpha: f64,
    m: u32,
}

impl BesovConfig {
    /// Requires `1/3 < α < 1/2`, `m ≥ 1`, `α - 1/(4m) > 1/3` and `4m(1/2 - α) > 1`.
    pub fn new(alpha: f64, m: u32) -> Result<Self> {
        let four_m = 4.0 * m as f64;
        let mut broken = Vec::new();
        if !(alpha > 1.0 / 3.0 && alpha < 0.5) {
            broken.push("1/3 < alpha < 1/2");
        }
        if m == 0 {
            broken.push("m >= 1");
        }
        if !(alpha - 1.0 / four_m > 1.0 / 3.0) {
            broken.push("alpha - 1/(4m) > 1/3");
        }
        if !(four_m * (0.5 - alpha) > 1.0) {
            broken.push("4m (1/2 - alpha) > 1");
        }
        if broken.is_empty() {
            Ok(Self { alpha, m })
        } else {
            Err(Error::InvalidInput(format!(
                "Besov parameters alpha = {alpha}, m = {m} violate: {}",
                broken.join(", ")
            )))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m(&self) -> u32 {
        self.m
    }
}

impl Default for BesovConfig {
    fn default() -> Self {
        Self { alpha: 0.35, m: 25 }
    }
}

/// Besov norms of the two levels, with the logarithms of the pre-root sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesovNorms {
    pub nu1: f64,
    pub nu2: f64,
    pub log_raw1: f64,
    pub log_raw2: f64,
}

/// Running `Σ x^p` kept as `M^p S` so that `p = 100` neither overflows nor underflows.
#[derive(Clone, Copy)]
struct ScaledPowerSum {
    p: i32,
    max: f64,
    sum: f64,
}

impl ScaledPowerSum {
    fn new(p: i32) -> Self {
        Self { p, max: 0.0, sum: 0.0 }
    }

    fn add(&mut self, x: f64) {
        if x <= 0.0 {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max / x).powi(self.p) + 1.0;
            self.max = x;
        } else {
            self.sum += (x / self.max).powi(self.p);
        }
    }

    fn merge(self, other: Self) -> Self {
        let (mut big, small) = if other.max > self.max {
            (other, self)
        } else {
            (self, other)
        };
        if small.max > 0.0 {
            big.sum += small.sum * (small.max / big.max).powi(big.p);
        }
        big
    }

    /// `(weight Σ x^p)^{1/p}` and `log(weight Σ x^p)`.
    fn finish(&self, weight: f64) -> (f64, f64) {
        if self.max == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        let inner = weight * self.sum;
        (
            self.max * inner.powf(1.0 / self.p as f64),
            self.p as f64 * self.max.ln() + inner.ln(),
        )
    }
}

/// Riemann sums of the two Besov double integrals of `p - q` over grid pairs `s < t`.
fn besov_sums(p: &Level2Path, q: Option<&Level2Path>, cfg: &BesovConfig) -> BesovNorms {
    let k = p.cells();
    let (d, dd) = (p.dim, p.dim * p.dim);
    let dt = p.dt();
    let four_m = 4.0 * cfg.m as f64;
    let e1 = (1.0 + four_m * cfg.alpha) / four_m;
    let e2 = 2.0 * e1;
    let scale1: Vec<f64> = (0..=k).map(|l| (l as f64 * dt).powf(-e1)).collect();
    let scale2: Vec<f64> = (0..=k).map(|l| (l as f64 * dt).powf(-e2)).collect();
    let (p1, p2) = (4 * cfg.m as i32, 2 * cfg.m as i32);
    let (s1, s2) = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut a = Increment::zero(d);
            let mut b = Increment::zero(d);
            let mut acc1 = ScaledPowerSum::new(p1);
            let mut acc2 = ScaledPowerSum::new(p2);
            for j in i + 1..=k {
                p.increment_into(i, j, &mut a.level1, &mut a.level2);
                if let Some(q) = q {
                    q.increment_into(i, j, &mut b.level1, &mut b.level2);
                }
                let n1: f64 = (0..d).map(|r| (a.level1[r] - b.level1[r]).powi(2)).sum::<f64>().sqrt();
                let n2: f64 = (0..dd).map(|r| (a.level2[r] - b.level2[r]).powi(2)).sum::<f64>().sqrt();
                acc1.add(n1 * scale1[j - i]);
                acc2.add(n2 * scale2[j - i]);
            }
            (acc1, acc2)
        })
        .reduce(
            || (ScaledPowerSum::new(p1), ScaledPowerSum::new(p2)),
            |x, y| (x.0.merge(y.0), x.1.merge(y.1)),
        );
    let (nu1, log_raw1) = s1.finish(dt * dt);
    let (nu2, log_raw2) = s2.finish(dt * dt);
    BesovNorms {
        nu1,
        nu2,
        log_raw1,
        log_raw2,
    }
}

/// `(‖w¹‖_{α,4m}, ‖w²‖_{2α,2m})` by Riemann sums over all grid pairs.
pub fn besov_norms(p: &Level2Path, cfg: &BesovConfig) -> BesovNorms {
    besov_sums(p, None, cfg)
}

/// Besov rough-path distance `ν₁(p - q) + ν₂(p - q)` on a common grid.
pub fn besov_distance(p: &Level2Path, q: &Level2Path, cfg: &BesovConfig) -> Result<f64> {
    if p.dim != q.dim || p.horizon != q.horizon {
        return Err(Error::InvalidInput(
            "besov_distance: paths differ in dimension or horizon".into(),
        ));
    }
    let k = common_cells(p.cells(), q.cells())
        .ok_or_else(|| Error::InvalidInput("besov_distance: grids have no common refinement".into()))?;
    let (p, q) = (p.refine(k / p.cells()), q.refine(k / q.cells()));
    let norms = besov_sums(&p, Some(&q), cfg);
    Ok(norms.nu1 + norms.nu2)
}

/// `k`-th dyadic piecewise-linear approximation: `w` sampled at `2^k` cells.
pub fn dyadic_approximation(w: &PiecewiseLinearPath, k: u32) -> Result<PiecewiseLinearPath> {
    let top = w
        .level()
        .ok_or_else(|| Error::InvalidInput("dyadic_approximation needs a dyadic grid".into()))?;
    if k > top {
        return Err(Error::InvalidInput(format!("level {k} exceeds the sample level {top}")));
    }
    let stride = 1usize << (top - k);
    let d = w.dim();
    let values: Vec<f64> = (0..=(1usize << k)).flat_map(|i| w.value(i * stride).to_vec()).collect();
    PiecewiseLinearPath::from_values(d, w.horizon(), values)
}

/// One level of the dyadic Cauchy diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyRow {
    pub level: u32,
    pub median: f64,
    pub q90: f64,
}

/// Medians over seeds of `d(ℒ(w(k)), ℒ(w(k+1)))` for Brownian samples drawn at
/// level `top`; both lifts are compared on the level-`top` grid.
pub fn dyadic_cauchy(
    dim: usize,
    levels: std::ops::RangeInclusive<u32>,
    top: u32,
    n_seeds: usize,
    seed: u64,
    cfg: &BesovConfig,
) -> Result<Vec<CauchyRow>> {
    if *levels.end() >= top {
        return Err(Error::InvalidInput(format!(
            "levels up to {} need a sample level above them, got {top}",
            levels.end()
        )));
    }
    let paths: Vec<PiecewiseLinearPath> = (0..n_seeds)
        .map(|s| sample_brownian(top, dim, 1.0, &mut stream_rng(seed, s as u64)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for k in levels {
        let dists: Vec<f64> = paths
            .iter()
            .map(|w| {
                let coarse = lift_dyadic(&dyadic_approximation(w, k)?.refine(1 << (top - k)));
                let fine = lift_dyadic(&dyadic_approximation(w, k + 1)?.refine(1 << (top - k - 1)));
                besov_distance(&coarse, &fine, cfg)
            })
            .collect::<Result<_>>()?;
        rows.push(CauchyRow {
            level: k,
            median: stats::median(&dists),
            q90: stats::quantile(&dists, 0.9),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(dim: usize, values: Vec<f64>) -> PiecewiseLinearPath {
        PiecewiseLinearPath::from_values(dim, 1.0, values).unwrap()
    }

    #[test]
    fn diagonal_line_lift() {
        let p = lift_dyadic(&path(2, vec![0.0, 0.0, 1.0, 1.0]));
        let inc = p.increment(0, 1);
        assert_eq!(inc.level1, vec![1.0, 1.0]);
        assert_eq!(inc.level2, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn two_segment_lift_has_area() {
        let p = lift_dyadic(&path(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
        let inc = p.increment(0, 2);
        assert_eq!(inc.level2, vec![0.5, 1.0, 0.0, 0.5]);
        assert_eq!(inc, p.increment_direct(0, 2));
    }

    #[test]
    fn zero_increment_is_identity() {
        let a = Increment::linear(&[0.3, -1.2]);
        assert_eq!(chen_combine(&a, &Increment::zero(2)).unwrap(), a);
        assert_eq!(chen_combine(&Increment::zero(2), &a).unwrap(), a);
    }

    #[test]
    fn halves_of_a_line_recombine() {
        let whole = Increment::linear(&[2.0, -4.0]);
        let half = Increment::linear(&[1.0, -2.0]);
        assert!(chen_combine(&half, &half).unwrap().max_diff(&whole) < 1e-15);
    }

    #[test]
    fn refine_preserves_coarse_increments() {
        let w = path(2, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.5, 2.0, 0.0, 0.0]);
        let mut coarse = lift_dyadic(&w);
        coarse = Level2Path::from_cells(2, 1.0, coarse.level1.clone(), {
            let mut l2 = coarse.level2.clone();
            l2[1] += 0.25;
            l2[2] -= 0.25;
            l2
        })
        .unwrap();
        let fine = coarse.refine(4);
        for i in 0..=4 {
            for j in i..=4 {
                assert!(coarse.increment(i, j).max_diff(&fine.increment(4 * i, 4 * j)) < 1e-14);
            }
        }
        assert!(fine.geometricity_defect() < 1e-15);
    }

    #[test]
    fn config_constraints() {
        assert!(BesovConfig::new(0.35, 25).is_ok());
        assert!(BesovConfig::new(0.4, 2).is_err());
        assert!(BesovConfig::new(0.45, 4).is_err());
        assert!(BesovConfig::new(0.34, 8).is_err());
        let err = BesovConfig::new(0.6, 25).unwrap_err().to_string();
        assert!(err.contains("1/3 < alpha < 1/2"), "{err}");
    }

    #[test]
    fn zero_path_has_zero_norms() {
        let n = besov_norms(&Level2Path::zero(2, 1.0, 16), &BesovConfig::default());
        assert_eq!((n.nu1, n.nu2), (0.0, 0.0));
    }

    #[test]
    fn scaled_sum_merges_in_any_order() {
        let xs = [0.3, 2.0, 1.5, 0.01, 2.5];
        let mut all = ScaledPowerSum::new(6);
        xs.iter().for_each(|&x| all.add(x));
        let mut a = ScaledPowerSum::new(6);
        let mut b = ScaledPowerSum::new(6);
        xs[..2].iter().for_each(|&x| a.add(x));
        xs[2..].iter().for_each(|&x| b.add(x));
        let direct: f64 = xs.iter().map(|x| x.powi(6)).sum();
        for s in [all, a.merge(b), b.merge(a)] {
            assert!((s.max.powi(6) * s.sum - direct).abs() < 1e-12 * direct);
        }
    }
}
