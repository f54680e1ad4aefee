//! Dense BFGS with Armijo backtracking, sized for the few-dozen-variable
//! control problems of the variational module.

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `|g|_∞ <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop after three consecutive steps with relative decrease below this.
    pub f_tol: f64,
    /// Stop as soon as `f <= f_target`.
    pub f_target: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            grad_tol: 1e-9,
            f_tol: 1e-13,
            f_target: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Minimizes `f` from `x0`. `fg(x, g)` returns `f(x)` and writes the gradient;
/// `f_only(x)` returns `f(x)` alone and is used by the line search.
/// Non-finite values are treated as `+∞`.
pub(crate) fn bfgs(
    mut fg: impl FnMut(&[f64], &mut [f64]) -> f64,
    mut f_only: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &BfgsOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    if !f.is_finite() {
        return Minimum {
            x,
            f: f64::INFINITY,
            iterations: 0,
        };
    }
    let mut hinv = identity(n);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut stalls = 0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        if f <= opts.f_target {
            break;
        }
        let gmax = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gmax <= opts.grad_tol * (1.0 + f.abs()) {
            break;
        }
        matvec_neg(&hinv, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hinv = identity(n);
            dir.iter_mut().zip(&g).for_each(|(d, gv)| *d = -gv);
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_try = f_only(&x_new);
            if f_try.is_finite() && f_try <= f + 1e-4 * step * slope {
                accepted = Some(f_try);
                break;
            }
            step *= 0.5;
        }
        let Some(_) = accepted else {
            if hinv_is_identity(&hinv) {
                break;
            }
            hinv = identity(n);
            continue;
        };
        let f_new = fg(&x_new, &mut g_new);
        if !f_new.is_finite() {
            break;
        }
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            update_inverse(&mut hinv, &s, &y, sy);
        }
        let rel = (f - f_new) / f.abs().max(1e-300);
        stalls = if rel < opts.f_tol { stalls + 1 } else { 0 };
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        if stalls >= 3 {
            break;
        }
    }
    Minimum { x, f, iterations }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn hinv_is_identity(h: &[f64]) -> bool {
    let n = (h.len() as f64).sqrt() as usize;
    (0..n).all(|i| (0..n).all(|j| h[i * n + j] == if i == j { 1.0 } else { 0.0 }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec_neg(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        out[i] = -dot(&m[i * n..(i + 1) * n], v);
    }
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn update_inverse(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
