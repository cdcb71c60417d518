//! Restricted MDPDE under linear constraints `L'β = l₀`, optionally with the
//! scale fixed as part of the null.
//!
//! The constraint set is parameterised as `β = β_p + Bξ` where `B` is an
//! orthonormal basis of `ker L'` and `β_p = L(L'L)⁻¹l₀`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DpdError, Result};
use crate::estimate::{self, Affine, FitOptions, MdpdeFit};
use crate::linalg;
use crate::models::{Dataset, Family, Model, ParamVector, ScaleRole};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    /// p×r matrix of full column rank.
    pub l: DMatrix<f64>,
    pub l0: DVector<f64>,
    /// `Fixed(σ₀)` adds `σ = σ₀` to the null; `Free` leaves σ unrestricted.
    pub scale_role: ScaleRole,
}

impl LinearConstraint {
    pub fn new(l: DMatrix<f64>, l0: DVector<f64>, scale_role: ScaleRole) -> Result<Self> {
        let c = Self { l, l0, scale_role };
        c.validate(c.l.nrows())?;
        Ok(c)
    }

    /// `β = β₀`, i.e. `L = I_p`.
    pub fn pin_beta(beta0: &DVector<f64>, scale_role: ScaleRole) -> Result<Self> {
        let p = beta0.len();
        Self::new(DMatrix::identity(p, p), beta0.clone(), scale_role)
    }

    /// No restriction on β.
    pub fn none(p: usize) -> Self {
        Self {
            l: DMatrix::zeros(p, 0),
            l0: DVector::zeros(0),
            scale_role: ScaleRole::Free,
        }
    }

    pub fn r(&self) -> usize {
        self.l.ncols()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.l.nrows() != p {
            return Err(DpdError::Invalid(format!(
                "L has {} rows, design has {p} columns",
                self.l.nrows()
            )));
        }
        if self.l0.len() != self.r() {
            return Err(DpdError::Invalid(format!(
                "l0 has {} entries, L has {} columns",
                self.l0.len(),
                self.r()
            )));
        }
        if self.r() > p {
            return Err(DpdError::Invalid(format!("r = {} exceeds p = {p}", self.r())));
        }
        if self.l.iter().chain(self.l0.iter()).any(|v| !v.is_finite()) {
            return Err(DpdError::Invalid("non-finite constraint entry".into()));
        }
        if self.r() > 0 && linalg::numerical_rank(&self.l, 1e-10) < self.r() {
            return Err(DpdError::Invalid("L does not have full column rank".into()));
        }
        if let ScaleRole::Fixed(s) = self.scale_role {
            if !(s > 0.0 && s.is_finite()) {
                return Err(DpdError::Domain(format!("fixed scale must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn fixes_scale(&self, model: &Model) -> bool {
        model.scale_is_free() && matches!(self.scale_role, ScaleRole::Fixed(_))
    }

    /// Model used while optimising under the constraint.
    pub(crate) fn inner_model(&self, model: &Model) -> Model {
        match self.scale_role {
            ScaleRole::Fixed(s) if model.scale_is_free() => model.with_fixed_scale(s),
            _ => *model,
        }
    }

    pub(crate) fn affine(&self) -> Affine {
        let p = self.l.nrows();
        if self.r() == 0 {
            return Affine::full(p);
        }
        let ltl = self.l.transpose() * &self.l;
        let base = &self.l * ltl.lu().solve(&self.l0).expect("full rank L");
        Affine {
            base,
            basis: linalg::null_space_of_transpose(&self.l),
        }
    }

    /// Orthonormal basis `B̃` (d×k) of the tangent space of the null in θ
    /// and `Υ` (d×m), the derivative of the constraint function.
    pub fn theta_bases(&self, model: &Model) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.l.nrows();
        let d = model.dim(p);
        let b = self.affine().basis;
        let k = b.ncols();
        let free = model.scale_is_free();
        let fixes = self.fixes_scale(model);
        let kt = k + usize::from(free && !fixes);
        let mut bt = DMatrix::zeros(d, kt);
        bt.view_mut((0, 0), (p, k)).copy_from(&b);
        if free && !fixes {
            bt[(p, k)] = 1.0;
        }
        let m = self.r() + usize::from(fixes);
        let mut ups = DMatrix::zeros(d, m);
        ups.view_mut((0, 0), (p, self.r())).copy_from(&self.l);
        if fixes {
            ups[(p, self.r())] = 1.0;
        }
        (bt, ups)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// `∇²Hₙ` replaced by its model expectation `(1+τ)Ψₙ`.
    #[default]
    Expected,
    /// Finite-difference Hessian of the analytic gradient at θ̃.
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmdpdeFit {
    pub theta_tilde: ParamVector,
    pub tau: f64,
    pub objective_value: f64,
    pub gradient_norm: f64,
    pub pn_matrix: DMatrix<f64>,
    pub omega_n: DMatrix<f64>,
    /// `Pₙ Ωₙ Pₙ`, the asymptotic covariance of `√n(θ̃ − θ)`.
    pub cov: DMatrix<f64>,
    pub n: usize,
    pub converged: bool,
    pub starts_used: usize,
}

/// Restricted least squares `β̂ − (X'X)⁻¹L{L'(X'X)⁻¹L}⁻¹(L'β̂ − l₀)`.
fn restricted_least_squares(data: &Dataset, c: &LinearConstraint) -> Result<DVector<f64>> {
    let x = data.design();
    let xtx_inv = linalg::spd_inverse(&(x.transpose() * x), "X'X")?;
    let b = &xtx_inv * (x.transpose() * data.response());
    if c.r() == 0 {
        return Ok(b);
    }
    let m = c.l.transpose() * &xtx_inv * &c.l;
    let adj = m.lu().solve(&(c.l.transpose() * &b - &c.l0)).ok_or_else(|| DpdError::Singular {
        what: "L'(X'X)^-1 L".into(),
        cond: f64::INFINITY,
    })?;
    Ok(b - &xtx_inv * &c.l * adj)
}

fn restricted_starts(
    model: &Model,
    data: &Dataset,
    tau: f64,
    c: &LinearConstraint,
    init: Option<&ParamVector>,
    opts: &FitOptions,
) -> Result<Vec<ParamVector>> {
    let inner = c.inner_model(model);
    let aff = c.affine();
    let mut starts = Vec::new();
    let fix = |th: &ParamVector| {
        let mut t = th.clone();
        t.beta = aff.project(&th.beta);
        if let ScaleRole::Fixed(s) = inner.scale {
            t.scale = Some(s);
        }
        t
    };
    if let Some(i) = init {
        starts.push(fix(i));
    }
    if model.family == Family::NormalLinear {
        let beta = restricted_least_squares(data, c)?;
        let scale = match inner.scale {
            ScaleRole::Free => {
                let rss = (data.response() - data.design() * &beta).norm_squared();
                Some((rss / data.n() as f64).sqrt().max(1e-8))
            }
            ScaleRole::Fixed(s) => Some(s),
            ScaleRole::Absent => None,
        };
        starts.push(ParamVector::new(aff.project(&beta), scale));
    }
    for s in estimate::start_points(&inner, data, tau, None, opts)? {
        starts.push(fix(&s));
    }
    Ok(starts)
}

pub fn fit_rmdpde(model: &Model, data: &Dataset, tau: f64, constraint: &LinearConstraint) -> Result<RmdpdeFit> {
    fit_rmdpde_with(model, data, tau, constraint, None, &FitOptions::default(), HessianMode::Expected)
}

pub fn fit_rmdpde_with(
    model: &Model,
    data: &Dataset,
    tau: f64,
    constraint: &LinearConstraint,
    init: Option<&ParamVector>,
    opts: &FitOptions,
    mode: HessianMode,
) -> Result<RmdpdeFit> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(DpdError::Domain(format!("tuning parameter must be >= 0, got {tau}")));
    }
    model.validate()?;
    constraint.validate(data.p())?;
    model.check_responses(data)?;
    crate::models::design_diagnostics(data.design()).require_full_rank()?;
    let inner = constraint.inner_model(model);
    let starts = restricted_starts(model, data, tau, constraint, init, opts)?;
    let metric = estimate::psi_matrix(&inner, data, &starts[0], tau).ok().map(|m| m * (1.0 + tau));
    let sol = estimate::minimize_affine(
        &inner,
        data.p(),
        |th| estimate::hn_eval(&inner, data, th, tau),
        &constraint.affine(),
        &starts,
        metric.as_ref(),
        &opts.control(),
    )?;
    let theta = sol.theta;
    let pn = pn_matrix(model, data, &theta, tau, constraint, mode)?;
    let omega = omega_matrix(model, data, &theta, tau)?;
    let cov = linalg::symmetrize(&(&pn * &omega * &pn));
    Ok(RmdpdeFit {
        objective_value: sol.value,
        gradient_norm: sol.conv_norm,
        theta_tilde: theta,
        tau,
        pn_matrix: pn,
        omega_n: omega,
        cov,
        n: data.n(),
        converged: true,
        starts_used: sol.starts_used,
    })
}

fn omega_matrix(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64) -> Result<DMatrix<f64>> {
    let x = data.design();
    let d = model.dim(data.p());
    let mut omega = DMatrix::zeros(d, d);
    for i in 0..data.n() {
        let xi = model.xi_vector(x, i, theta, tau)?;
        omega += model.j_matrix(x, i, theta, 2.0 * tau)? - &xi * xi.transpose();
    }
    Ok(linalg::symmetrize(&(omega / data.n() as f64)))
}

/// `∇²Hₙ(θ)/(1+τ)` per the chosen mode.
pub fn scaled_hessian(model: &Model, data: &Dataset, theta: &ParamVector, tau: f64, mode: HessianMode) -> Result<DMatrix<f64>> {
    match mode {
        HessianMode::Expected => estimate::psi_matrix(model, data, theta, tau),
        HessianMode::Observed => {
            let p = data.p();
            let h = linalg::fd_jacobian(
                |v| Ok(estimate::hn_eval(model, data, &model.unflatten(v, p), tau)?.1),
                &model.flatten(theta),
                1e-5,
            )?;
            Ok(linalg::symmetrize(&h) / (1.0 + tau))
        }
    }
}

/// `Pₙ = H⁻¹[I − Υ(ΥᵀH⁻¹Υ)⁻¹ΥᵀH⁻¹]` with `H = ∇²Hₙ/(1+τ)`.
pub fn pn_matrix(
    model: &Model,
    data: &Dataset,
    theta: &ParamVector,
    tau: f64,
    constraint: &LinearConstraint,
    mode: HessianMode,
) -> Result<DMatrix<f64>> {
    let h = scaled_hessian(model, data, theta, tau, mode)?;
    let (_, ups) = constraint.theta_bases(model);
    pn_from_hessian(&h, &ups)
}

pub(crate) fn pn_from_hessian(h: &DMatrix<f64>, ups: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    let hinv = linalg::inverse(h, "Hessian of H_n")?;
    if ups.ncols() == 0 {
        return Ok(linalg::symmetrize(&hinv));
    }
    let star = ups.transpose() * &hinv * ups;
    let star_inv = linalg::inverse(&star, "Upsilon* matrix")?;
    let proj = DMatrix::identity(d, d) - ups * star_inv * ups.transpose() * &hinv;
    Ok(linalg::symmetrize(&(hinv * proj)))
}

/// `υ_τ^e = 4σ⁴/(2+τ²)²·[2(1+2τ²)(1+τ²/(1+2τ))^{5/2} − τ²(1+τ)²]`, the
/// asymptotic variance of `√n(σ̃² − σ²)` for normal regression.
pub fn rmdpde_scale_variance(tau: f64, sigma: f64) -> Result<f64> {
    if !(tau >= 0.0) || !(sigma > 0.0) {
        return Err(DpdError::Domain(format!("need τ >= 0 and σ > 0, got {tau}, {sigma}")));
    }
    let t2 = tau * tau;
    Ok(4.0 * sigma.powi(4) / (2.0 + t2).powi(2)
        * (2.0 * (1.0 + 2.0 * t2) * (1.0 + t2 / (1.0 + 2.0 * tau)).powf(2.5) - t2 * (1.0 + tau).powi(2)))
}

/// `P̃ₙ = I − L{L'(X'X)⁻¹L}⁻¹L'(X'X)⁻¹`.
pub fn normal_projection(x: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    let xtx_inv = linalg::spd_inverse(&(x.transpose() * x), "X'X")?;
    if l.ncols() == 0 {
        return Ok(DMatrix::identity(p, p));
    }
    let m = linalg::inverse(&(l.transpose() * &xtx_inv * l), "L'(X'X)^-1 L")?;
    Ok(DMatrix::identity(p, p) - l * m * l.transpose() * xtx_inv)
}

/// Population restricted estimator at the model `θ*`: minimises
/// `(1/n)Σᵢ d_τ(fᵢ(·;θ*), fᵢ(·;θ))` over the null.
pub fn population_rmdpde(
    model: &Model,
    x: &DMatrix<f64>,
    theta_star: &ParamVector,
    tau: f64,
    constraint: &LinearConstraint,
) -> Result<ParamVector> {
    population_rmdpde_weighted(model, x, &vec![1.0; x.nrows()], theta_star, tau, constraint)
}

/// As [`population_rmdpde`] with row `i` of `x` carrying weight `w[i]`.
pub(crate) fn population_rmdpde_weighted(
    model: &Model,
    x: &DMatrix<f64>,
    w: &[f64],
    theta_star: &ParamVector,
    tau: f64,
    constraint: &LinearConstraint,
) -> Result<ParamVector> {
    constraint.validate(x.ncols())?;
    let inner = constraint.inner_model(model);
    let total: f64 = w.iter().sum();
    let dim = inner.dim(x.ncols());
    let rows: Vec<usize> = (0..x.nrows()).filter(|&i| w[i] > 0.0).collect();
    let obj = |th: &ParamVector| -> Result<(f64, DVector<f64>)> {
        let mut v = 0.0;
        let mut g = DVector::zeros(dim);
        for &i in &rows {
            v += w[i] * model.dpd_divergence(x, i, theta_star, th, tau)?;
            let (_, g2) = model.divergence_gradients(x, i, theta_star, th, tau)?;
            g += g2.rows(0, dim) * w[i];
        }
        Ok((v / total, g / total))
    };
    let aff = constraint.affine();
    let mut start = theta_star.clone();
    start.beta = aff.project(&theta_star.beta);
    if let ScaleRole::Fixed(s) = inner.scale {
        start.scale = Some(s);
    }
    let mut metric = DMatrix::zeros(dim, dim);
    for &i in &rows {
        metric += inner.a_matrix(x, i, &start, tau)? * w[i];
    }
    metric /= total;
    let ctl = FitOptions::default().control();
    let sol = estimate::minimize_affine(&inner, x.ncols(), obj, &aff, &[start], Some(&metric), &ctl)?;
    Ok(sol.theta)
}

pub fn fit_pair(
    model: &Model,
    data: &Dataset,
    tau: f64,
    constraint: &LinearConstraint,
    opts: &FitOptions,
) -> Result<(MdpdeFit, RmdpdeFit)> {
    let fit = estimate::fit_mdpde_with(model, data, tau, None, opts)?;
    let rfit = fit_rmdpde_with(model, data, tau, constraint, Some(&fit.theta_hat), opts, HessianMode::Expected)?;
    Ok((fit, rfit))
}
