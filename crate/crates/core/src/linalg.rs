//! Small dense helpers on row-major slices, used in inner loops where
//! allocating `nalgebra` matrices would dominate.

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// `a` (n x n) is destroyed; `b` receives the solution. Returns false if singular.
pub fn solve_in_place(n: usize, a: &mut [f64], b: &mut [f64]) -> bool {
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return false;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col * n + c] * b[c];
        }
        b[col] = s / a[col * n + col];
    }
    true
}

/// `out = a b` for n x n row-major matrices.
pub fn matmul(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// `max |(eᵀe - I)_{ij}|`.
pub fn orthogonality_defect(n: usize, e: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += e[k * n + i] * e[k * n + j];
            }
            if i == j {
                s -= 1.0;
            }
            worst = worst.max(s.abs());
        }
    }
    worst
}

/// Projects `e` onto the orthogonal group by Newton–Schulz polar iteration
/// `e <- e (3I - eᵀe) / 2`. Returns the max-abs change, or `None` if the
/// iteration fails to reach `1e-14`. `scratch` must hold `3 n²` values.
pub fn polar_retract(n: usize, e: &mut [f64], scratch: &mut [f64]) -> Option<f64> {
    let nn = n * n;
    let (orig, rest) = scratch.split_at_mut(nn);
    let (gram, next) = rest.split_at_mut(nn);
    orig.copy_from_slice(e);
    for _ in 0..30 {
        let mut defect: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += e[k * n + i] * e[k * n + j];
                }
                let dev = if i == j { s - 1.0 } else { s };
                defect = defect.max(dev.abs());
                gram[i * n + j] = if i == j { 1.5 - 0.5 * s } else { -0.5 * s };
            }
        }
        if defect < 1e-14 {
            let change = e
                .iter()
                .zip(orig.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            return Some(change);
        }
        matmul(n, e, gram, &mut next[..nn]);
        e.copy_from_slice(&next[..nn]);
    }
    None
}
