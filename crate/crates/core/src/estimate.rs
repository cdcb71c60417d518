//! Minimum density power divergence estimation.
//!
//! The objective is `Hₙ(θ) = (1/n)Σᵢ[∫fᵢ^{1+τ} − (1+1/τ)fᵢ(Yᵢ)^τ]`, with the
//! negative average log-likelihood at τ = 0. It is minimised over
//! `(β, log σ)` from several starts and the lowest converged stationary point
//! is returned.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::linalg;
use crate::models::{Dataset, Family, Model, ParamVector, ScaleRole};
use crate::optim::{self, Eval, OptimControl};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpdeFit {
    pub theta_hat: ParamVector,
    pub tau: f64,
    pub objective_value: f64,
    pub gradient_norm: f64,
    /// `Ψₙ = (1/n)Σ J⁽ⁱ⁾(τ)`.
    pub psi_n: DMatrix<f64>,
    /// `Ωₙ = (1/n)Σ [J⁽ⁱ⁾(2τ) − ξᵢξᵢᵀ]`.
    pub omega_n: DMatrix<f64>,
    /// Asymptotic covariance of `√n(θ̂ − θ)`: `Ψₙ⁻¹ΩₙΨₙ⁻¹`.
    pub cov: DMatrix<f64>,
    pub n: usize,
    pub converged: bool,
    pub starts_used: usize,
}

impl MdpdeFit {
    /// Plug-in standard errors `√(diag(cov)/n)`.
    pub fn standard_errors(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| (v / self.n as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

/// Optimizer settings shared by the unrestricted and restricted fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Random restarts in addition to the deterministic starts.
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0x5eed_d9d0,
            max_iter: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
        }
    }
}

impl FitOptions {
    pub(crate) fn control(&self) -> OptimControl {
        OptimControl {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            ..OptimControl::default()
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(DpdError::Domain(format!("tuning parameter must be >= 0, got {tau}")))
    }
}

/// Objective and gradient in θ coordinates.
pub(crate) fn hn_eval(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<(f64, DVector<f64>)> {
    let x = data.design();
    let y = data.response();
    let n = data.n();
    let mut grad = DVector::zeros(model.dim(data.p()));
    let mut value = 0.0;
    for i in 0..n {
        value += model.objective_term(x, i, y[i], theta, tau, &mut grad)?;
    }
    Ok((value / n as f64, grad / n as f64))
}

pub fn hn_objective(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    model.validate_param(theta, data.p())?;
    model.check_responses(data)?;
    Ok(hn_eval(model, data, theta, tau)?.0)
}

pub fn hn_gradient(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<DVector<f64>> {
    check_tau(tau)?;
    model.validate_param(theta, data.p())?;
    model.check_responses(data)?;
    Ok(hn_eval(model, data, theta, tau)?.1)
}

/// `Ψₙ`, `Ωₙ` and `Ψₙ⁻¹ΩₙΨₙ⁻¹` at θ.
pub fn sandwich(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<Sandwich> {
    check_tau(tau)?;
    let x = data.design();
    let n = data.n();
    let d = model.dim(data.p());
    let mut psi = DMatrix::zeros(d, d);
    let mut omega = DMatrix::zeros(d, d);
    for i in 0..n {
        psi += model.j_matrix(x, i, theta, tau)?;
        let xi = model.xi_vector(x, i, theta, tau)?;
        omega += model.j_matrix(x, i, theta, 2.0 * tau)? - &xi * xi.transpose();
    }
    psi /= n as f64;
    omega /= n as f64;
    let psi_inv = linalg::spd_inverse(&psi, "Psi_n")?;
    let cov = linalg::symmetrize(&(&psi_inv * &omega * &psi_inv));
    Ok(Sandwich {
        psi: linalg::symmetrize(&psi),
        omega: linalg::symmetrize(&omega),
        cov,
    })
}

/// `Ψₙ = (1/n)Σ J⁽ⁱ⁾(τ)` only.
pub fn psi_matrix(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<DMatrix<f64>> {
    let x = data.design();
    let d = model.dim(data.p());
    let mut psi = DMatrix::zeros(d, d);
    for i in 0..data.n() {
        psi += model.j_matrix(x, i, theta, tau)?;
    }
    Ok(linalg::symmetrize(&(psi / data.n() as f64)))
}

/// Iteratively reweighted least squares for the discrete families.
fn irls(model: &Model, data: &Dataset) -> Result<DVector<f64>> {
    let x = data.design();
    let y = data.response();
    let n = data.n();
    let (mut eta, mut mu): (DVector<f64>, DVector<f64>) = match model.family {
        Family::PoissonLog => {
            let mu = y.map(|v| v + 0.5);
            (mu.map(f64::ln), mu)
        }
        Family::BernoulliLogit => {
            let mu = y.map(|v| (v + 0.5) / 2.0);
            (mu.map(|m| (m / (1.0 - m)).ln()), mu)
        }
        Family::NormalLinear => unreachable!("normal start is least squares"),
    };
    let mut beta = DVector::zeros(data.p());
    let mut dev_old = f64::INFINITY;
    for _ in 0..100 {
        let w = match model.family {
            Family::PoissonLog => mu.clone(),
            _ => mu.map(|m| m * (1.0 - m)),
        }
        .map(|v| v.max(1e-12));
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let sw = w.map(f64::sqrt);
        let xw = DMatrix::from_fn(n, data.p(), |i, j| x[(i, j)] * sw[i]);
        let zw = z.component_mul(&sw);
        beta = linalg::least_squares(&xw, &zw)?;
        eta = x * &beta;
        mu = match model.family {
            Family::PoissonLog => eta.map(f64::exp),
            _ => eta.map(|e| 1.0 / (1.0 + (-e).exp())),
        };
        let theta = ParamVector::new(beta.clone(), None);
        let dev = hn_eval(model, data, &theta, 0.0)?.0;
        if (dev_old - dev).abs() <= 1e-13 * (1.0 + dev.abs()) {
            break;
        }
        dev_old = dev;
    }
    if beta.iter().all(|b| b.is_finite()) {
        Ok(beta)
    } else {
        Err(DpdError::NonConvergence("IRLS diverged".into()))
    }
}

/// The τ = 0 solution: least squares (σ² = RSS/n) or IRLS.
pub fn initial_estimate(model: &Model, data: &Dataset) -> Result<ParamVector> {
    match model.family {
        Family::NormalLinear => {
            let beta = linalg::least_squares(data.design(), data.response())?;
            let scale = match model.scale {
                ScaleRole::Free => {
                    let rss = (data.response() - data.design() * &beta).norm_squared();
                    let s = (rss / data.n() as f64).sqrt();
                    if !(s > 0.0) {
                        return Err(DpdError::Domain("zero residual variance".into()));
                    }
                    Some(s)
                }
                ScaleRole::Fixed(s) => Some(s),
                ScaleRole::Absent => None,
            };
            Ok(ParamVector::new(beta, scale))
        }
        _ => Ok(ParamVector::new(irls(model, data)?, None)),
    }
}

/// Randomised starting points: elemental-subset least squares with a MAD
/// scale for the normal family, perturbed IRLS solutions otherwise.
fn random_starts(model: &Model, data: &Dataset, base: &ParamVector, count: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (data.n(), data.p());
    let x = data.design();
    let y = data.response();
    let mut out = Vec::with_capacity(count);
    match model.family {
        Family::NormalLinear => {
            let mut attempts = 0;
            while out.len() < count && attempts < 20 * count {
                attempts += 1;
                let rows = rand::seq::index::sample(&mut rng, n, p).into_vec();
                let xs = x.select_rows(rows.iter());
                let ys = DVector::from_iterator(p, rows.iter().map(|&i| y[i]));
                let Some(beta) = xs.lu().solve(&ys) else { continue };
                if !beta.iter().all(|b| b.is_finite()) {
                    continue;
                }
                let scale = if model.scale_is_free() {
                    let mut res: Vec<f64> = (y - x * &beta).iter().map(|r| r.abs()).collect();
                    res.sort_by(f64::total_cmp);
                    let mad = 1.4826 * res[n / 2];
                    let s = if mad > 1e-8 * base.scale.unwrap_or(1.0) { mad } else { base.scale.unwrap_or(1.0) };
                    Some(s)
                } else {
                    base.scale
                };
                out.push(ParamVector::new(beta, scale));
            }
        }
        _ => {
            let cov = {
                let th = base.clone();
                let mut info = DMatrix::zeros(p, p);
                for i in 0..n {
                    let m = model.mean(x, i, &th);
                    let w = if model.family == Family::PoissonLog { m } else { m * (1.0 - m) };
                    let xi = x.row(i).transpose();
                    info += &xi * xi.transpose() * w;
                }
                info.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::identity(p, p))
            };
            for _ in 0..count {
                let beta = DVector::from_fn(p, |j, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    base.beta[j] + 2.0 * z * cov[(j, j)].max(0.0).sqrt()
                });
                out.push(ParamVector::new(beta, None));
            }
        }
    }
    out
}

/// `β = base + basis·ξ` with orthonormal basis columns.
#[derive(Clone, Debug)]
pub(crate) struct Affine {
    pub base: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl Affine {
    pub fn full(p: usize) -> Self {
        Self {
            base: DVector::zeros(p),
            basis: DMatrix::identity(p, p),
        }
    }

    pub fn project(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * (beta - &self.base)) + &self.base
    }
}

pub(crate) struct SubspaceFit {
    pub theta: ParamVector,
    pub value: f64,
    pub conv_norm: f64,
    pub starts_used: usize,
}

/// Minimise `obj` over `{(β, σ): β ∈ aff}` from each start; returns the lowest
/// converged point.
///
/// `metric` is an approximate Hessian in θ used for the first BFGS metric.
pub(crate) fn minimize_affine<O>(
    model: &Model,
    p: usize,
    obj: O,
    aff: &Affine,
    starts: &[ParamVector],
    metric: Option<&DMatrix<f64>>,
    ctl: &OptimControl,
) -> Result<SubspaceFit>
where
    O: Fn(&ParamVector) -> Result<(f64, DVector<f64>)>,
{
    let k = aff.basis.ncols();
    let free = model.scale_is_free();
    let dz = k + usize::from(free);
    if dz == 0 {
        let scale = match model.scale {
            ScaleRole::Fixed(s) => Some(s),
            _ => None,
        };
        let theta = ParamVector::new(aff.base.clone(), scale);
        let (value, _) = obj(&theta)?;
        return Ok(SubspaceFit {
            theta,
            value,
            conv_norm: 0.0,
            starts_used: 0,
        });
    }
    // Reduced basis for θ: blockdiag(B, 1).
    let mut bt = DMatrix::zeros(model.dim(p), dz);
    bt.view_mut((0, 0), (p, k)).copy_from(&aff.basis);
    if free {
        bt[(p, k)] = 1.0;
    }
    let to_theta = |z: &DVector<f64>| -> ParamVector {
        let beta = &aff.base + &aff.basis * z.rows(0, k);
        let scale = match model.scale {
            ScaleRole::Free => Some(z[k].exp()),
            ScaleRole::Fixed(s) => Some(s),
            ScaleRole::Absent => None,
        };
        ParamVector::new(beta, scale)
    };
    let mut best: Option<SubspaceFit> = None;
    let mut failures = Vec::new();
    for start in starts {
        let mut z0 = DVector::zeros(dz);
        z0.rows_mut(0, k).copy_from(&(aff.basis.transpose() * (&start.beta - &aff.base)));
        let s0 = if free { start.scale.unwrap_or(1.0) } else { 1.0 };
        if free {
            z0[k] = s0.ln();
        }
        let h0 = metric
            .and_then(|m| {
                let red = bt.transpose() * m * &bt;
                let mut red = linalg::symmetrize(&red);
                if free {
                    // Chain rule for log σ.
                    for j in 0..dz {
                        red[(j, k)] *= s0;
                        red[(k, j)] *= s0;
                    }
                }
                linalg::spd_inverse(&red, "metric").ok()
            })
            .unwrap_or_else(|| DMatrix::identity(dz, dz));
        let f = |z: &DVector<f64>| -> Result<Eval> {
            let th = to_theta(z);
            let (value, g) = obj(&th)?;
            let mut gz = bt.transpose() * g;
            let conv_norm = gz.norm();
            if free {
                gz[k] *= th.scale.unwrap_or(1.0);
            }
            Ok(Eval { value, grad: gz, conv_norm })
        };
        match optim::minimize(f, z0, h0, ctl) {
            Ok(out) => {
                let th = to_theta(&out.z);
                let collapsed = free && th.scale.map_or(true, |s| s < 1e-6 * s0 || !s.is_finite());
                if out.converged && !collapsed {
                    if best.as_ref().map_or(true, |b| out.value < b.value) {
                        best = Some(SubspaceFit {
                            theta: th,
                            value: out.value,
                            conv_norm: out.conv_norm,
                            starts_used: 0,
                        });
                    }
                } else if collapsed {
                    failures.push("scale collapsed".to_string());
                } else {
                    failures.push(format!("gradient norm {:.3e} after {} iterations", out.conv_norm, out.iterations));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    match best {
        Some(mut b) => {
            b.starts_used = starts.len();
            Ok(b)
        }
        None => Err(DpdError::NonConvergence(format!(
            "no start converged ({})",
            failures.join("; ")
        ))),
    }
}

fn check_fit_inputs(model: &Model, data: &Dataset, tau: f64) -> Result<()> {
    check_tau(tau)?;
    model.validate()?;
    model.check_responses(data)?;
    crate::models::design_diagnostics(data.design()).require_full_rank()
}

/// Deterministic and random starts for a fit at τ.
pub(crate) fn start_points(
    model: &Model,
    data: &Dataset,
    tau: f64,
    init: Option<&ParamVector>,
    opts: &FitOptions,
) -> Result<Vec<ParamVector>> {
    let base = initial_estimate(model, data)?;
    let mut starts = Vec::new();
    if let Some(i) = init {
        model.validate_param(i, data.p())?;
        starts.push(i.clone());
    }
    starts.push(base.clone());
    if tau > 0.0 {
        starts.extend(random_starts(model, data, &base, opts.restarts, opts.seed));
    }
    Ok(starts)
}

pub fn fit_mdpde(model: &Model, data: &Dataset, tau: f64, init: Option<&ParamVector>) -> Result<MdpdeFit> {
    fit_mdpde_with(model, data, tau, init, &FitOptions::default())
}

pub fn fit_mdpde_with(
    model: &Model,
    data: &Dataset,
    tau: f64,
    init: Option<&ParamVector>,
    opts: &FitOptions,
) -> Result<MdpdeFit> {
    check_fit_inputs(model, data, tau)?;
    let starts = start_points(model, data, tau, init, opts)?;
    let metric = psi_matrix(model, data, &starts[0], tau).ok().map(|m| m * (1.0 + tau));
    let sol = minimize_affine(
        model,
        data.p(),
        |th| hn_eval(model, data, th, tau),
        &Affine::full(data.p()),
        &starts,
        metric.as_ref(),
        &opts.control(),
    )?;
    let sw = sandwich(model, data, &sol.theta, tau)?;
    Ok(MdpdeFit {
        theta_hat: sol.theta,
        tau,
        objective_value: sol.value,
        gradient_norm: sol.conv_norm,
        psi_n: sw.psi,
        omega_n: sw.omega,
        cov: sw.cov,
        n: data.n(),
        converged: true,
        starts_used: sol.starts_used,
    })
}

/// Fits along a τ-grid, warm-starting each fit from the previous solution.
pub fn fit_path(model: &Model, data: &Dataset, taus: &[f64], opts: &FitOptions) -> Vec<Result<MdpdeFit>> {
    let mut prev: Option<ParamVector> = None;
    taus.iter()
        .map(|&tau| {
            let fit = fit_mdpde_with(model, data, tau, prev.as_ref(), opts);
            if let Ok(f) = &fit {
                prev = Some(f.theta_hat.clone());
            }
            fit
        })
        .collect()
}
