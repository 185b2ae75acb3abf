//! Small dense optimizers shared by the engines: BFGS with central-difference
//! gradients, a numerical Hessian and bracketed bisection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    /// Stop when the objective improves by less than this (relative) for a few iterations.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Relative step for central differences.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-5, f_tol: 1e-12, max_iter: 200, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], rel_step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = rel_step * (1.0 + x[k].abs());
            xp[k] = x[k] + h;
            let up = f(&xp);
            xp[k] = x[k] - h;
            let dn = f(&xp);
            xp[k] = x[k];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Symmetric central-difference Hessian of `f` at `x` with absolute step `h`.
pub fn numerical_hessian(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        out[(i, i)] = (up - 2.0 * f0 + dn) / (h * h);
        for j in 0..i {
            let mut acc = 0.0;
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                acc += si * sj * f(&xp);
            }
            xp[i] = x[i];
            xp[j] = x[j];
            out[(i, j)] = acc / (4.0 * h * h);
            out[(j, i)] = out[(i, j)];
        }
    }
    out
}

/// Maximizes `f` by BFGS with an Armijo backtracking line search.
///
/// Non-finite objective values are treated as `-inf`, so the search simply
/// backs away from them.
pub fn maximize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], opts: &BfgsOptions) -> Result<OptimResult> {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::Domain(format!("objective is not finite at the starting point {x0:?}")));
    }
    let mut g = DVector::from_vec(numerical_gradient(&mut eval, x.as_slice(), opts.fd_step));
    // inverse Hessian approximation of -f
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut stall = 0;
    let mut trace = Vec::new();
    for it in 0..opts.max_iter {
        let gnorm = g.amax();
        trace.push(gnorm);
        if gnorm < opts.grad_tol {
            return Ok(OptimResult { x: x.as_slice().to_vec(), value: fx, iterations: it, grad_norm: gnorm });
        }
        let mut dir = &hinv * &g;
        if dir.dot(&g) <= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = g.clone();
        }
        // cap the step length on the unconstrained scale
        let len = dir.amax();
        if len > 2.0 {
            dir *= 2.0 / len;
        }
        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = &x + t * &dir;
            let fnew = eval(xn.as_slice());
            if fnew >= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // no ascent along the quasi-Newton direction: restart from the gradient once
            if hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                continue;
            }
            if gnorm < 1e3 * opts.grad_tol {
                return Ok(OptimResult { x: x.as_slice().to_vec(), value: fx, iterations: it, grad_norm: gnorm });
            }
            return Err(Error::NonConvergence { stage: "bfgs line search", iterations: it, grad_norm: gnorm, trace });
        };
        let gn = DVector::from_vec(numerical_gradient(&mut eval, xn.as_slice(), opts.fd_step));
        let s = &xn - &x;
        // y is the change in the gradient of -f
        let y = &g - &gn;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if it == 0 {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - rho * &s * y.transpose();
            hinv = &a * &hinv * a.transpose() + rho * &s * s.transpose();
        }
        let improvement = fnew - fx;
        stall = if improvement <= opts.f_tol * (1.0 + fx.abs()) { stall + 1 } else { 0 };
        x = xn;
        fx = fnew;
        g = gn;
        if stall >= 3 && g.amax() < 1e3 * opts.grad_tol {
            return Ok(OptimResult { x: x.as_slice().to_vec(), value: fx, iterations: it + 1, grad_norm: g.amax() });
        }
    }
    let gnorm = g.amax();
    if gnorm < 1e2 * opts.grad_tol {
        return Ok(OptimResult { x: x.as_slice().to_vec(), value: fx, iterations: opts.max_iter, grad_norm: gnorm });
    }
    Err(Error::NonConvergence { stage: "bfgs", iterations: opts.max_iter, grad_norm: gnorm, trace })
}

/// Root of `f` on `[lo, hi]` by bisection; `f(lo)` and `f(hi)` must differ in sign.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, x_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if !(flo.signum() != fhi.signum()) || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Bracketing(format!("f({lo}) = {flo}, f({hi}) = {fhi} do not bracket a root")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= x_tol * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Walks from `start` in steps of `step` (growing by `growth`) until `f` changes sign.
/// Returns the bracketing pair `(inside, outside)` or `None` after `max_steps`.
pub fn bracket_from(
    mut f: impl FnMut(f64) -> f64,
    start: f64,
    step: f64,
    growth: f64,
    max_steps: usize,
) -> Option<(f64, f64)> {
    let s0 = f(start).signum();
    let mut prev = start;
    let mut h = step;
    for _ in 0..max_steps {
        let next = prev + h;
        let v = f(next);
        if v.is_nan() {
            return None;
        }
        if v.signum() != s0 {
            return Some((prev, next));
        }
        prev = next;
        h *= growth;
    }
    None
}
