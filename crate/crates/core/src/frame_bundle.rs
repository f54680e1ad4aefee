//! The trivialized bundle `P = M x G`, `G = O(d) x O(n-d)`, with horizontal
//! lift, canonical horizontal fields and the development map.
//!
//! A bundle point is `u = (x, e)` with `e` an `n x n` block-orthogonal matrix
//! (row-major). Column `i` of `e` gives the frame coefficients of `u⟨e_i⟩`, so
//! `u⟨e_i⟩ = Σ_γ e_{γi} Z_γ(x)`. For `v = Σ_γ c_γ Z_γ(x)` the horizontal lift is
//! `(v, -Ω(c) e)` with `Ω(c)_{αβ} = Σ_γ Γ^α_{βγ} c_γ`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldModel, VectorField};
use crate::linalg;
use crate::paths::{BasePath, CameronMartinPath, PiecewiseLinearPath};

/// Tolerance on `‖eᵀe - I‖` and on the off-diagonal blocks of `e`.
pub const FRAME_TOL: f64 = 1e-8;
/// Largest retraction correction accepted after one control segment.
pub const MAX_RETRACTION: f64 = 1e-3;
/// Default admissibility tolerance: transverse velocity relative to speed.
pub const ADMISSIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePoint {
    pub x: Vec<f64>,
    /// Row-major `n x n`.
    pub e: Vec<f64>,
}

impl FramePoint {
    pub fn new(model: &ManifoldModel, x: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        let n = model.dim_n();
        if x.len() != n || e.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "frame point needs {n} coordinates and {} frame entries",
                n * n
            )));
        }
        if x.iter().chain(&e).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("frame point has non-finite entries".into()));
        }
        let u = FramePoint { x, e };
        let orth = u.orthogonality_defect();
        if orth > FRAME_TOL {
            return Err(Error::InvalidInput(format!(
                "e is not orthogonal: ‖eᵀe - I‖ = {orth:e}"
            )));
        }
        let block = u.block_defect(model.dim_d());
        if block > FRAME_TOL {
            return Err(Error::InvalidInput(format!(
                "e mixes the horizontal and vertical blocks (max entry {block:e})"
            )));
        }
        Ok(u)
    }

    /// `(x, Id)`.
    pub fn identity(model: &ManifoldModel, x: &[f64]) -> Result<Self> {
        let n = model.dim_n();
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = 1.0;
        }
        Self::new(model, x.to_vec(), e)
    }

    /// `(x, R_θ)` with `R_θ` a rotation by `θ` in the plane of the first two
    /// horizontal directions (requires `d >= 2`).
    pub fn rotated(model: &ManifoldModel, x: &[f64], theta: f64) -> Result<Self> {
        if model.dim_d() < 2 {
            return Err(Error::InvalidInput("rotation needs d >= 2".into()));
        }
        let mut u = Self::identity(model, x)?;
        let n = model.dim_n();
        let (s, c) = theta.sin_cos();
        u.e[0] = c;
        u.e[1] = -s;
        u.e[n] = s;
        u.e[n + 1] = c;
        Ok(u)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn orthogonality_defect(&self) -> f64 {
        linalg::orthogonality_defect(self.n(), &self.e)
    }

    pub fn block_defect(&self, d: usize) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                if (a < d) != (b < d) {
                    worst = worst.max(self.e[a * n + b].abs());
                }
            }
        }
        worst
    }

    /// Right action `u·a = (x, e a)` for a block-orthogonal `a`.
    pub fn right_act(&self, a: &[f64]) -> Self {
        let n = self.n();
        let mut e = vec![0.0; n * n];
        linalg::matmul(n, &self.e, a, &mut e);
        FramePoint { x: self.x.clone(), e }
    }
}

/// Tangent vector to `P` at a bundle point: chart part and frame part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleTangent {
    pub dx: Vec<f64>,
    pub de: Vec<f64>,
}

/// `de = -Ω(c) e`, written into `out`.
fn lift_frame_part(n: usize, gamma: &[f64], c: &[f64], e: &[f64], out: &mut [f64]) {
    let mut stack = [0.0f64; 16];
    let mut heap = Vec::new();
    let omega: &mut [f64] = if n * n <= 16 {
        &mut stack[..n * n]
    } else {
        heap.resize(n * n, 0.0);
        &mut heap
    };
    for (w, row) in omega.iter_mut().zip(gamma.chunks_exact(n)) {
        *w = row.iter().zip(c).map(|(g, cc)| g * cc).sum();
    }
    for (orow, orow_out) in omega.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        orow_out.iter_mut().for_each(|v| *v = 0.0);
        for (w, erow) in orow.iter().zip(e.chunks_exact(n)) {
            for (o, ev) in orow_out.iter_mut().zip(erow) {
                *o -= w * ev;
            }
        }
    }
}

/// Horizontal lift `ℓ_u v`.
pub fn horizontal_lift(model: &ManifoldModel, u: &FramePoint, v: &[f64]) -> Result<BundleTangent> {
    let n = model.dim_n();
    if v.len() != n || u.n() != n {
        return Err(Error::InvalidInput("dimension mismatch in horizontal lift".into()));
    }
    let c = model.frame_coordinates(&u.x, v)?;
    let mut de = vec![0.0; n * n];
    if !model.has_zero_connection() {
        let gamma = model.christoffel(&u.x);
        lift_frame_part(n, &gamma, &c, &u.e, &mut de);
    }
    Ok(BundleTangent { dx: v.to_vec(), de })
}

/// `A_i` at a (not necessarily orthogonal) bundle point, without checks.
fn canonical_field_raw(model: &ManifoldModel, x: &[f64], e: &[f64], i: usize) -> BundleTangent {
    let n = model.dim_n();
    let mut frame = vec![0.0; n * n];
    model.frame_into(x, &mut frame);
    let c: Vec<f64> = (0..n).map(|g| e[g * n + i]).collect();
    let dx = (0..n).map(|k| (0..n).map(|g| frame[k * n + g] * c[g]).sum()).collect();
    let mut de = vec![0.0; n * n];
    if !model.has_zero_connection() {
        let gamma = model.christoffel(x);
        lift_frame_part(n, &gamma, &c, e, &mut de);
    }
    BundleTangent { dx, de }
}

/// The canonical horizontal fields `A_1..A_n` at `u`; the first `d` drive development.
pub fn canonical_fields(model: &ManifoldModel, u: &FramePoint) -> Result<Vec<BundleTangent>> {
    let n = model.dim_n();
    if u.n() != n || u.e.len() != n * n {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    model.eval_frame(&u.x)?;
    Ok((0..n).map(|i| canonical_field_raw(model, &u.x, &u.e, i)).collect())
}

/// Drift for development: `A_0 = ℓ⟨V + drift correction⟩` run at clock rate `rate`.
#[derive(Clone)]
pub struct Drift {
    /// `V`; `None` means `V = 0` (the drift correction is still applied).
    pub field: Option<VectorField>,
    pub rate: f64,
}

impl Drift {
    pub fn correction_only(rate: f64) -> Self {
        Drift { field: None, rate }
    }
}

struct Buffers {
    frame: Vec<f64>,
    gamma: Vec<f64>,
    c: Vec<f64>,
    lu: Vec<f64>,
    rhs: Vec<f64>,
    corr: Vec<f64>,
}

/// Reusable integrator state for development along piecewise-linear controls.
pub(crate) struct Engine<'a> {
    model: &'a ManifoldModel,
    n: usize,
    zero_conn: bool,
    drift: Option<&'a Drift>,
    fd_step: f64,
    buf: Buffers,
    stages: [Vec<f64>; 4],
    ytmp: Vec<f64>,
    scratch: Vec<f64>,
    /// Current state `(x, vec e)`.
    pub y: Vec<f64>,
    state_len: usize,
    /// Velocity does not depend on the state, so one Euler step per segment is exact.
    state_free: bool,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a ManifoldModel, drift: Option<&'a Drift>) -> Self {
        let n = model.dim_n();
        let zero_conn = model.has_zero_connection();
        let full = n + n * n;
        let drift = drift.filter(|d| d.rate != 0.0);
        let state_free = model.has_constant_frame()
            && zero_conn
            && drift.is_none_or(|d| d.field.is_none() && model.has_zero_drift_correction());
        Engine {
            model,
            n,
            zero_conn,
            drift,
            fd_step: crate::geometry::DEFAULT_FD_STEP,
            buf: Buffers {
                frame: vec![0.0; n * n],
                gamma: vec![0.0; n * n * n],
                c: vec![0.0; n],
                lu: vec![0.0; n * n],
                rhs: vec![0.0; n],
                corr: vec![0.0; n],
            },
            stages: [vec![0.0; full], vec![0.0; full], vec![0.0; full], vec![0.0; full]],
            ytmp: vec![0.0; full],
            scratch: vec![0.0; 3 * n * n],
            y: vec![0.0; full],
            state_len: if zero_conn { n } else { full },
            state_free,
        }
    }

    pub fn set_state(&mut self, u: &FramePoint) {
        let n = self.n;
        self.y[..n].copy_from_slice(&u.x);
        self.y[n..].copy_from_slice(&u.e);
    }

    /// Velocity of `(x, e)` under control `k` (length `m <= n`): frame
    /// coefficients `c = e[:, :m] k`, plus the drift contribution.
    fn velocity(
        model: &ManifoldModel,
        zero_conn: bool,
        drift: Option<&Drift>,
        fd_step: f64,
        buf: &mut Buffers,
        y: &[f64],
        k: &[f64],
        out: &mut [f64],
    ) -> bool {
        let n = model.dim_n();
        let (x, e) = y.split_at(n);
        model.frame_into(x, &mut buf.frame);
        if !zero_conn {
            model.connection_into(x, &mut buf.gamma);
        }
        for g in 0..n {
            let row = &e[g * n..g * n + k.len()];
            buf.c[g] = row.iter().zip(k).map(|(a, b)| a * b).sum();
        }
        if let Some(dr) = drift {
            if let Some(v) = &dr.field {
                v(x, &mut buf.rhs);
                buf.lu.copy_from_slice(&buf.frame);
                if !linalg::solve_in_place(n, &mut buf.lu, &mut buf.rhs) {
                    return false;
                }
                for g in 0..n {
                    buf.c[g] += dr.rate * buf.rhs[g];
                }
            }
            if !model.has_zero_drift_correction() {
                model.correction_coeffs_into(x, &buf.gamma, fd_step, &mut buf.corr);
                for g in 0..n {
                    buf.c[g] += dr.rate * buf.corr[g];
                }
            }
        }
        for kk in 0..n {
            let row = &buf.frame[kk * n..(kk + 1) * n];
            out[kk] = row.iter().zip(&buf.c).map(|(a, b)| a * b).sum();
        }
        if !zero_conn {
            lift_frame_part(n, &buf.gamma, &buf.c, e, &mut out[n..]);
        }
        true
    }

    /// `A_i(y)` in embedded coordinates (no drift), written into `out`.
    pub fn canonical_field_into(&mut self, y: &[f64], i: usize, out: &mut [f64]) {
        let n = self.n;
        let mut k = vec![0.0; n];
        k[i] = 1.0;
        out.iter_mut().for_each(|v| *v = 0.0);
        Self::velocity(
            self.model,
            self.zero_conn,
            None,
            self.fd_step,
            &mut self.buf,
            y,
            &k[..=i],
            out,
        );
    }

    /// One classical 4-stage step of length `dt` under constant control `k`.
    fn rk4_step(&mut self, k: &[f64], dt: f64) -> bool {
        let len = self.state_len;
        let m = self.model;
        let (zc, dr, fd) = (self.zero_conn, self.drift, self.fd_step);
        let [s1, s2, s3, s4] = &mut self.stages;
        if !Self::velocity(m, zc, dr, fd, &mut self.buf, &self.y, k, s1) {
            return false;
        }
        self.ytmp.copy_from_slice(&self.y);
        for j in 0..len {
            self.ytmp[j] = self.y[j] + 0.5 * dt * s1[j];
        }
        if !Self::velocity(m, zc, dr, fd, &mut self.buf, &self.ytmp, k, s2) {
            return false;
        }
        for j in 0..len {
            self.ytmp[j] = self.y[j] + 0.5 * dt * s2[j];
        }
        if !Self::velocity(m, zc, dr, fd, &mut self.buf, &self.ytmp, k, s3) {
            return false;
        }
        for j in 0..len {
            self.ytmp[j] = self.y[j] + dt * s3[j];
        }
        if !Self::velocity(m, zc, dr, fd, &mut self.buf, &self.ytmp, k, s4) {
            return false;
        }
        for j in 0..len {
            self.y[j] += dt / 6.0 * (s1[j] + 2.0 * (s2[j] + s3[j]) + s4[j]);
        }
        true
    }

    /// Develops along per-segment increments (`K x m`, row-major), each of
    /// duration `seg_dt`, calling `on_point(i, y)` after segment `i` (1-based).
    pub fn run(
        &mut self,
        increments: &[f64],
        m: usize,
        seg_dt: f64,
        substeps: usize,
        t0: f64,
        mut on_point: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let n = self.n;
        let sub = substeps.max(1);
        let dt = seg_dt / sub as f64;
        let mut k = vec![0.0; m];
        for (seg, inc) in increments.chunks_exact(m).enumerate() {
            for (kv, iv) in k.iter_mut().zip(inc) {
                *kv = iv / seg_dt;
            }
            if self.state_free {
                let s1 = &mut self.stages[0];
                Self::velocity(self.model, true, None, self.fd_step, &mut self.buf, &self.y, &k, s1);
                for j in 0..n {
                    self.y[j] += seg_dt * s1[j];
                }
                on_point(seg + 1, &self.y);
                continue;
            }
            for _ in 0..sub {
                if !self.rk4_step(&k, dt) {
                    return Err(Error::SingularFrame {
                        point: self.y[..n].to_vec(),
                        sigma_min: 0.0,
                    });
                }
            }
            let time = t0 + (seg + 1) as f64 * seg_dt;
            if self.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at t = {time}")));
            }
            if !self.zero_conn {
                let change = linalg::polar_retract(n, &mut self.y[n..], &mut self.scratch)
                    .ok_or_else(|| Error::Numerical(format!("retraction diverged at t = {time}")))?;
                if change > MAX_RETRACTION {
                    return Err(Error::StepRejected {
                        time,
                        correction: change,
                    });
                }
            }
            on_point(seg + 1, &self.y);
        }
        Ok(())
    }
}

/// Bundle path on a time grid, with its base projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTrajectory {
    n: usize,
    times: Vec<f64>,
    xs: Vec<f64>,
    es: Vec<f64>,
}

impl FrameTrajectory {
    pub(crate) fn with_capacity(n: usize, len: usize) -> Self {
        FrameTrajectory {
            n,
            times: Vec::with_capacity(len),
            xs: Vec::with_capacity(len * n),
            es: Vec::with_capacity(len * n * n),
        }
    }

    pub(crate) fn push(&mut self, t: f64, y: &[f64]) {
        self.times.push(t);
        self.xs.extend_from_slice(&y[..self.n]);
        self.es.extend_from_slice(&y[self.n..]);
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

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.n..(i + 1) * self.n]
    }

    pub fn e(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.es[i * nn..(i + 1) * nn]
    }

    pub fn point(&self, i: usize) -> FramePoint {
        FramePoint {
            x: self.x(i).to_vec(),
            e: self.e(i).to_vec(),
        }
    }

    pub fn end(&self) -> FramePoint {
        self.point(self.len() - 1)
    }

    pub fn base(&self) -> BasePath {
        BasePath::new(self.n, self.times.clone(), self.xs.clone()).expect("trajectory grid is valid")
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| linalg::orthogonality_defect(self.n, self.e(i)))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x1..xn, e11..enn` (e row-major).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.n;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|k| format!("x{k}")));
        for a in 1..=n {
            for b in 1..=n {
                header.push(format!("e{a}{b}"));
            }
        }
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.x(i).iter().map(f64::to_string));
            row.extend(self.e(i).iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn develop_inner(
    model: &ManifoldModel,
    u0: &FramePoint,
    h: &PiecewiseLinearPath,
    drift: Option<&Drift>,
    substeps: usize,
) -> Result<FrameTrajectory> {
    let n = model.dim_n();
    if u0.n() != n || u0.e.len() != n * n {
        return Err(Error::InvalidInput("initial frame point has wrong dimension".into()));
    }
    let mut eng = Engine::new(model, drift);
    eng.set_state(u0);
    let k = h.segments();
    let dt = h.dt();
    let mut traj = FrameTrajectory::with_capacity(n, k + 1);
    traj.push(0.0, &eng.y);
    let incs = h.increments();
    let mut pts: Vec<(usize, Vec<f64>)> = Vec::with_capacity(k);
    eng.run(&incs, h.dim(), dt, substeps, 0.0, |i, y| pts.push((i, y.to_vec())))?;
    for (i, y) in pts {
        traj.push(h.horizon() * i as f64 / k as f64, &y);
    }
    Ok(traj)
}

/// Development `h ↦ ψ(h)`: solves `dφ = Σ_{i≤d} A_i(φ) dh^i (+ A_0(φ) λ' dt)`
/// with one 4-stage step per control segment (or `substeps` of them) and a
/// polar retraction of `e` after every segment.
pub fn develop(
    model: &ManifoldModel,
    u0: &FramePoint,
    h: &CameronMartinPath,
    drift: Option<&Drift>,
    substeps: usize,
) -> Result<FrameTrajectory> {
    if h.dim() != model.dim_d() {
        return Err(Error::InvalidInput(format!(
            "control has dimension {}, distribution has rank {}",
            h.dim(),
            model.dim_d()
        )));
    }
    develop_inner(model, u0, h, drift, substeps)
}

/// Development driven by all `n` canonical fields (`h` is `n`-dimensional).
pub fn develop_full(
    model: &ManifoldModel,
    u0: &FramePoint,
    h: &CameronMartinPath,
    substeps: usize,
) -> Result<FrameTrajectory> {
    if h.dim() != model.dim_n() {
        return Err(Error::InvalidInput(format!(
            "full development needs an {}-dimensional control",
            model.dim_n()
        )));
    }
    develop_inner(model, u0, h, None, substeps)
}

/// Frame coefficients of every chord of `gamma`, evaluated at chord midpoints
/// (`K x n`, row-major), with the worst transverse/speed ratio and its segment.
pub(crate) fn chord_coefficients(model: &ManifoldModel, gamma: &BasePath) -> Result<(Vec<f64>, f64, usize)> {
    let n = model.dim_n();
    let d = model.dim_d();
    if gamma.n() != n {
        return Err(Error::InvalidInput("path dimension does not match model".into()));
    }
    let k = gamma.len() - 1;
    let mut out = vec![0.0; k * n];
    let mut frame = vec![0.0; n * n];
    let mut mid = vec![0.0; n];
    let mut worst = (0.0, 0);
    for j in 0..k {
        let (p, q) = (gamma.point(j), gamma.point(j + 1));
        let dt = gamma.times()[j + 1] - gamma.times()[j];
        let c = &mut out[j * n..(j + 1) * n];
        for i in 0..n {
            mid[i] = 0.5 * (p[i] + q[i]);
            c[i] = (q[i] - p[i]) / dt;
        }
        model.frame_into(&mid, &mut frame);
        if !linalg::solve_in_place(n, &mut frame, c) {
            return Err(Error::SingularFrame {
                point: mid.clone(),
                sigma_min: 0.0,
            });
        }
        let speed = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let perp = c[d..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let ratio = if speed > 0.0 { perp / speed } else { 0.0 };
        if ratio > worst.0 {
            worst = (ratio, j);
        }
    }
    Ok((out, worst.0, worst.1))
}

/// Anti-development: horizontally lifts `gamma` from `u0` and reads off the
/// control `h' = θ(u')` (first `d` components).
pub fn antidevelop(model: &ManifoldModel, u0: &FramePoint, gamma: &BasePath, tol: f64) -> Result<CameronMartinPath> {
    let n = model.dim_n();
    let d = model.dim_d();
    if model.chart_distance(&u0.x, gamma.start()) > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "path starts at {:?}, frame point sits over {:?}",
            gamma.start(),
            u0.x
        )));
    }
    let times = gamma.times();
    let k = times.len() - 1;
    let span = times[k] - times[0];
    let dt0 = span / k as f64;
    if times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt0).abs() > 1e-9 * dt0.max(1.0))
    {
        return Err(Error::InvalidInput("anti-development needs a uniform time grid".into()));
    }
    let (coeffs, worst, seg) = chord_coefficients(model, gamma)?;
    if worst > tol {
        return Err(Error::NotAdmissible {
            segment: seg,
            ratio: worst,
        });
    }
    let zero_conn = model.has_zero_connection();
    let mut e = u0.e.clone();
    let mut gamma_buf = vec![0.0; n * n * n];
    let mut incs = vec![0.0; k * d];
    let mut stage = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    let mut etmp = vec![0.0; n * n];
    let mut xs = vec![0.0; n];
    let mut scratch = vec![0.0; 3 * n * n];
    for j in 0..k {
        let c = &coeffs[j * n..(j + 1) * n];
        let dt = times[j + 1] - times[j];
        let e_start = e.clone();
        if !zero_conn {
            let (p, q) = (gamma.point(j), gamma.point(j + 1));
            let mut eval = |s: f64, ecur: &[f64], out: &mut [f64]| {
                for i in 0..n {
                    xs[i] = p[i] + s * (q[i] - p[i]);
                }
                model.connection_into(&xs, &mut gamma_buf);
                lift_frame_part(n, &gamma_buf, c, ecur, out);
            };
            let [s1, s2, s3, s4] = &mut stage;
            eval(0.0, &e, s1);
            for i in 0..n * n {
                etmp[i] = e[i] + 0.5 * dt * s1[i];
            }
            eval(0.5, &etmp, s2);
            for i in 0..n * n {
                etmp[i] = e[i] + 0.5 * dt * s2[i];
            }
            eval(0.5, &etmp, s3);
            for i in 0..n * n {
                etmp[i] = e[i] + dt * s3[i];
            }
            eval(1.0, &etmp, s4);
            for i in 0..n * n {
                e[i] += dt / 6.0 * (s1[i] + 2.0 * (s2[i] + s3[i]) + s4[i]);
            }
            linalg::polar_retract(n, &mut e, &mut scratch)
                .ok_or_else(|| Error::Numerical("retraction diverged".into()))?;
        }
        for i in 0..d {
            let mut s = 0.0;
            for g in 0..d {
                s += 0.5 * (e_start[g * n + i] + e[g * n + i]) * c[g];
            }
            incs[j * d + i] = s * dt;
        }
    }
    PiecewiseLinearPath::from_increments(d, span, &incs)
}

/// `|Σ_{i≤d} A_i²(f∘π)(u) - Δ̃f(π(u))|`, both sides by nested central differences.
pub fn verify_generator(model: &ManifoldModel, u: &FramePoint, f: &dyn Fn(&[f64]) -> f64, fd_step: f64) -> Result<f64> {
    let n = model.dim_n();
    if u.n() != n {
        return Err(Error::InvalidInput("frame point has wrong dimension".into()));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    let s = fd_step;
    let shift = |x: &[f64], e: &[f64], t: &BundleTangent, sign: f64| -> (Vec<f64>, Vec<f64>) {
        (
            x.iter().zip(&t.dx).map(|(a, b)| a + sign * s * b).collect(),
            e.iter().zip(&t.de).map(|(a, b)| a + sign * s * b).collect(),
        )
    };
    let a_f = |i: usize, x: &[f64], e: &[f64]| -> f64 {
        let t = canonical_field_raw(model, x, e, i);
        let (xp, _) = shift(x, e, &t, 1.0);
        let (xm, _) = shift(x, e, &t, -1.0);
        (f(&xp) - f(&xm)) / (2.0 * s)
    };
    let mut lhs = 0.0;
    for i in 0..model.dim_d() {
        let t = canonical_field_raw(model, &u.x, &u.e, i);
        let (xp, ep) = shift(&u.x, &u.e, &t, 1.0);
        let (xm, em) = shift(&u.x, &u.e, &t, -1.0);
        lhs += (a_f(i, &xp, &ep) - a_f(i, &xm, &em)) / (2.0 * s);
    }
    let rhs = model.apply_connection_laplacian(f, &u.x, fd_step)?;
    Ok((lhs - rhs).abs())
}
