//! Monte Carlo heat kernels `p^ε_t(x, a)` with respect to the model volume,
//! positivity certificates and the small-noise curve `ε² log p`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::frame_bundle::FramePoint;
use crate::geometry::ManifoldModel;
use crate::stats;
use crate::stochastics::{generate_ensemble, Ensemble, SimSpec};

/// Batches used for batch-means standard errors.
pub const BATCHES: usize = 20;

/// Kernel bandwidth: one value for all coordinates, or one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Bandwidth {
    /// Per-coordinate plug-in rule `1.06 σ̂_k N^{-1/(n+4)}`.
    PlugIn,
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

impl Bandwidth {
    fn resolve(&self, ens: &Ensemble) -> Result<Vec<f64>> {
        let n = ens.dim;
        let b = match self {
            Bandwidth::PlugIn => plug_in_bandwidth(ens),
            Bandwidth::Scalar(b) => vec![*b; n],
            Bandwidth::PerCoordinate(v) => v.clone(),
        };
        if b.len() != n || b.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be {n} positive values, got {b:?}"
            )));
        }
        Ok(b)
    }
}

/// `1.06 σ̂_k N^{-1/(n+4)}` per coordinate. Endpoint spread is already of
/// order ε, so σ̂ is used as is.
pub fn plug_in_bandwidth(ens: &Ensemble) -> Vec<f64> {
    let n = ens.dim;
    let count = ens.len();
    let factor = 1.06 * (count as f64).powf(-1.0 / (n as f64 + 4.0));
    (0..n)
        .map(|k| {
            let col: Vec<f64> = (0..count).map(|i| ens.endpoint(i)[k]).collect();
            let sd = if count > 1 { stats::variance(&col).sqrt() } else { 0.0 };
            factor * sd.max(1e-12)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatKernelEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub bandwidth: Vec<f64>,
    pub n: usize,
    pub eps: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
}

/// Gaussian product-kernel estimate of the endpoint density at `a`, divided
/// by the volume density. On periodic models endpoints and target are reduced
/// to the fundamental domain and the kernel is summed over the nearest
/// lattice translates of `a`. The standard error comes from [`BATCHES`]
/// batch means; with no mass near `a` it is the one-sample kernel peak times
/// the rule-of-three hit bound `3/N`.
pub fn estimate_density(
    ens: &Ensemble,
    x: &[f64],
    a: &[f64],
    bandwidth: &Bandwidth,
    model: &ManifoldModel,
) -> Result<HeatKernelEstimate> {
    let n = model.dim_n();
    if ens.dim != n || a.len() != n {
        return Err(Error::InvalidInput(
            "ensemble, target and model dimensions differ".into(),
        ));
    }
    if ens.len() < BATCHES {
        return Err(Error::InvalidInput(format!(
            "need at least {BATCHES} samples, got {}",
            ens.len()
        )));
    }
    let b = bandwidth.resolve(ens)?;
    let per = model.periodicity();
    let targets = per.images(&per.reduce(a));
    let norm: f64 = b.iter().map(|bk| (2.0 * std::f64::consts::PI).sqrt() * bk).product();
    let rho = model.vol_density(a);
    if !(rho > 0.0) {
        return Err(Error::InvalidInput(format!("volume density at {a:?} is not positive")));
    }
    let count = ens.len();
    let kernel = |i: usize| -> f64 {
        let p = per.reduce(ens.endpoint(i));
        targets
            .iter()
            .map(|t| {
                let q: f64 = (0..n).map(|k| ((p[k] - t[k]) / b[k]).powi(2)).sum();
                (-0.5 * q).exp()
            })
            .sum::<f64>()
            / norm
    };
    let values: Vec<f64> = (0..count).map(kernel).collect();
    let p_hat = stats::mean(&values) / rho;
    let stderr = if p_hat > 0.0 {
        let size = count / BATCHES;
        let batch: Vec<f64> = (0..BATCHES)
            .map(|j| stats::mean(&values[j * size..(j + 1) * size]) / rho)
            .collect();
        (stats::variance(&batch) / BATCHES as f64).sqrt()
    } else {
        3.0 / count as f64 / norm / rho
    };
    Ok(HeatKernelEstimate {
        p_hat,
        stderr,
        bandwidth: b,
        n: count,
        eps: ens.eps,
        t: ens.horizon,
        x: x.to_vec(),
        a: a.to_vec(),
    })
}

/// Simulates from the identity frame at `x` and estimates `p^ε_t(x, a)`.
pub fn heat_kernel(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    spec: &SimSpec,
    count: usize,
    bandwidth: &Bandwidth,
) -> Result<HeatKernelEstimate> {
    let u0 = FramePoint::identity(model, x)?;
    let ens = generate_ensemble(model, &u0, spec, count, false)?;
    estimate_density(&ens, x, a, bandwidth, model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Positivity {
    pub estimate: HeatKernelEstimate,
    /// One-sided 99% lower confidence bound from the batch means.
    pub lower_bound: f64,
    pub certified: bool,
}

/// One-sided 99% lower confidence bound `p̂ - t_{0.99, B-1} se`.
pub fn lower_confidence_bound(est: &HeatKernelEstimate) -> f64 {
    let t = StudentsT::new(0.0, 1.0, (BATCHES - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.99);
    est.p_hat - t * est.stderr
}

/// Certifies `p > 0` when the lower confidence bound of an estimate is positive.
pub fn certify(est: HeatKernelEstimate) -> Positivity {
    let lower_bound = lower_confidence_bound(&est);
    Positivity {
        certified: est.p_hat > 0.0 && lower_bound > 0.0,
        lower_bound,
        estimate: est,
    }
}

/// Monte Carlo positivity check for `p^ε_1(x, a)`.
pub fn positivity(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    spec: &SimSpec,
    count: usize,
    bandwidth: &Bandwidth,
) -> Result<Positivity> {
    Ok(certify(heat_kernel(model, x, a, spec, count, bandwidth)?))
}

/// One `ε` of the small-noise curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpRow {
    pub eps: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub eps2logp: f64,
    /// Delta-method error `ε² se / p̂`.
    pub eps2logp_stderr: f64,
    pub target: f64,
    pub gap: f64,
    /// `ε² log p` from the model's closed-form kernel, when it has one.
    pub exact: Option<f64>,
    pub feasible: bool,
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpCurve {
    pub d_sr: f64,
    pub rows: Vec<LdpRow>,
    /// Gaps strictly decrease down the ladder (over feasible rows, in the given order).
    pub gap_decreasing: bool,
}

/// Expected hits `N exp(-d²/2ε²)` below this mark a row as infeasible up front.
pub const MIN_EXPECTED_HITS: f64 = 10.0;

/// `ε² log p̂^ε_t(x, a)` against `-d²/2` along `eps_list`; each `ε` uses the
/// seed `seed + index`.
#[allow(clippy::too_many_arguments)]
pub fn ldp_curve(
    model: &ManifoldModel,
    x: &[f64],
    a: &[f64],
    eps_list: &[f64],
    count: usize,
    level: u32,
    seed: u64,
    d_sr: f64,
    bandwidth: &Bandwidth,
) -> Result<LdpCurve> {
    if eps_list.is_empty() {
        return Err(Error::InvalidInput("ε list is empty".into()));
    }
    let target = -0.5 * d_sr * d_sr;
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidInput(format!("ε = {eps} outside (0, 1]")));
        }
        let precheck = count as f64 * (target / (eps * eps)).exp() >= MIN_EXPECTED_HITS;
        let spec = SimSpec::new(eps, level, seed + i as u64);
        let pos = positivity(model, x, a, &spec, count, bandwidth)?;
        let est = &pos.estimate;
        let e2 = eps * eps;
        let eps2logp = if est.p_hat > 0.0 {
            e2 * est.p_hat.ln()
        } else {
            f64::NEG_INFINITY
        };
        let exact = model.oracles().heat_kernel.as_ref().map(|hk| e2 * hk(e2, x, a).ln());
        rows.push(LdpRow {
            eps,
            p_hat: est.p_hat,
            stderr: est.stderr,
            eps2logp,
            eps2logp_stderr: if est.p_hat > 0.0 {
                e2 * est.stderr / est.p_hat
            } else {
                f64::INFINITY
            },
            target,
            gap: (eps2logp - target).abs(),
            exact,
            feasible: precheck && pos.certified,
            lower_bound: pos.lower_bound,
        });
    }
    let feasible: Vec<&LdpRow> = rows.iter().filter(|r| r.feasible).collect();
    let gap_decreasing = feasible.len() >= 2 && feasible.windows(2).all(|w| w[1].gap < w[0].gap);
    Ok(LdpCurve {
        d_sr,
        rows,
        gap_decreasing,
    })
}
