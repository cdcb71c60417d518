//! BFGS with backtracking line search, finished by Newton steps on a
//! finite-difference Hessian of the analytic gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{DpdError, Result};
use crate::linalg;

/// Objective value, gradient in the optimizer's coordinates, and the norm
/// used for the convergence test (which may live in other coordinates).
pub(crate) struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub conv_norm: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct OptimControl {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_step: f64,
}

impl Default for OptimControl {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_step: 5.0,
        }
    }
}

pub(crate) struct Outcome {
    pub z: DVector<f64>,
    pub value: f64,
    pub conv_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn converged(e: &Eval, ctl: &OptimControl) -> bool {
    e.conv_norm <= ctl.grad_tol * (1.0 + e.value.abs())
}

fn eval_ok<F>(f: &mut F, z: &DVector<f64>) -> Option<Eval>
where
    F: FnMut(&DVector<f64>) -> Result<Eval>,
{
    match f(z) {
        Ok(e) if e.value.is_finite() && e.grad.iter().all(|g| g.is_finite()) => Some(e),
        _ => None,
    }
}

/// Armijo backtracking along `dir`; returns the accepted point and evaluation.
fn line_search<F>(
    f: &mut F,
    z: &DVector<f64>,
    cur: &Eval,
    dir: &DVector<f64>,
) -> Option<(DVector<f64>, Eval)>
where
    F: FnMut(&DVector<f64>) -> Result<Eval>,
{
    let slope = cur.grad.dot(dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..60 {
        let cand = z + dir * t;
        if let Some(e) = eval_ok(f, &cand) {
            if e.value <= cur.value + 1e-4 * t * slope {
                return Some((cand, e));
            }
        }
        t *= 0.5;
    }
    None
}

/// Minimise `f` from `z0` using `h0` as the initial inverse Hessian.
pub(crate) fn minimize<F>(mut f: F, z0: DVector<f64>, h0: DMatrix<f64>, ctl: &OptimControl) -> Result<Outcome>
where
    F: FnMut(&DVector<f64>) -> Result<Eval>,
{
    let mut z = z0;
    let mut cur = f(&z)?;
    if !cur.value.is_finite() {
        return Err(DpdError::NonConvergence("objective not finite at start".into()));
    }
    let n = z.len();
    let mut h = h0;
    let mut iter = 0;
    while iter < ctl.max_iter && !converged(&cur, ctl) {
        iter += 1;
        let mut dir = -(&h * &cur.grad);
        if cur.grad.dot(&dir) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -cur.grad.clone();
        }
        let norm = dir.norm();
        if norm > ctl.max_step {
            dir *= ctl.max_step / norm;
        }
        let Some((next, ne)) = line_search(&mut f, &z, &cur, &dir).or_else(|| {
            // Retry along steepest descent with a fresh metric.
            h = DMatrix::identity(n, n);
            let mut g = -cur.grad.clone();
            let gn = g.norm();
            if gn > ctl.max_step {
                g *= ctl.max_step / gn;
            }
            line_search(&mut f, &z, &cur, &g)
        }) else {
            break;
        };
        let s = &next - &z;
        let y = &ne.grad - &cur.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let step = s.norm();
        z = next;
        cur = ne;
        if step <= ctl.step_tol * (1.0 + z.norm()) {
            break;
        }
    }
    // Newton polish.
    let mut polish = 0;
    while polish < 20 && !converged(&cur, ctl) {
        polish += 1;
        let hess = match fd_hessian(&mut f, &z) {
            Some(m) => m,
            None => break,
        };
        let Some(ch) = hess.cholesky() else { break };
        let dir = -ch.solve(&cur.grad);
        match line_search(&mut f, &z, &cur, &dir) {
            Some((next, ne)) => {
                let step = (&next - &z).norm();
                z = next;
                cur = ne;
                if step <= ctl.step_tol * (1.0 + z.norm()) && !converged(&cur, ctl) {
                    break;
                }
            }
            None => break,
        }
    }
    Ok(Outcome {
        converged: converged(&cur, ctl),
        value: cur.value,
        conv_norm: cur.conv_norm,
        z,
        iterations: iter + polish,
    })
}

fn fd_hessian<F>(f: &mut F, z: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<Eval>,
{
    let n = z.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-5 * z[j].abs().max(1.0);
        let mut a = z.clone();
        let mut b = z.clone();
        a[j] += h;
        b[j] -= h;
        let ga = eval_ok(f, &a)?.grad;
        let gb = eval_ok(f, &b)?.grad;
        m.set_column(j, &((ga - gb) / (2.0 * h)));
    }
    Some(linalg::symmetrize(&m))
}
