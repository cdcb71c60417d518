//! Divergence-based Wald-type tests.
//!
//! The simple statistic is `T_γ = 2Σᵢ d_γ(fᵢ(θ̂), fᵢ(θ₀))` and the composite
//! one `S_γ = 2Σᵢ d_γ(fᵢ(θ̂), fᵢ(θ̃))`, with θ̂ the MDPDE and θ̃ the restricted
//! MDPDE, both at tuning τ. Under the null both are asymptotically a weighted
//! sum of χ²₁ variables with weights the nonzero eigenvalues of `AΣ`, where
//! `A = (1/n)Σ A_γ⁽ⁱ⁾` and `Σ` is the asymptotic covariance of `√n(θ̂ − θ₀)`
//! (simple) or `√n(θ̂ − θ̃)` (composite).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DpdError, Result};
use crate::estimate::{self, FitOptions, MdpdeFit};
use crate::linalg;
use crate::models::{normal_beta_variance, normal_null_weight, Dataset, Family, Model, ParamVector, ScaleRole};
use crate::quadform::{self, QuadFormDist, SeriesControl, TailProbability, RANK_TOLERANCE};
use crate::restrict::{self, HessianMode, LinearConstraint, RmdpdeFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// `θ = θ₀`.
    Simple { theta0: ParamVector },
    /// `L'β = l₀`, optionally with `σ = σ₀`.
    Composite { constraint: LinearConstraint },
}

impl Hypothesis {
    pub fn validate(&self, model: &Model, p: usize) -> Result<()> {
        match self {
            Hypothesis::Simple { theta0 } => model.validate_param(theta0, p),
            Hypothesis::Composite { constraint } => constraint.validate(p),
        }
    }

    /// Checks that `theta` lies in the null set.
    pub fn contains(&self, model: &Model, theta: &ParamVector, tol: f64) -> bool {
        match self {
            Hypothesis::Simple { theta0 } => {
                (model.flatten(theta) - model.flatten(theta0)).amax() <= tol * (1.0 + model.flatten(theta0).amax())
            }
            Hypothesis::Composite { constraint } => {
                let lhs = constraint.l.transpose() * &theta.beta;
                let ok_beta = (lhs - &constraint.l0).amax() <= tol * (1.0 + constraint.l0.amax());
                let ok_scale = match (constraint.scale_role, model.scale_is_free()) {
                    (ScaleRole::Fixed(s), true) => (model.sigma(theta) - s).abs() <= tol * s,
                    _ => true,
                };
                ok_beta && ok_scale
            }
        }
    }
}

/// Tuning of the estimator (τ), of the statistic (γ) and the level α.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Tuning {
    pub fn new(tau: f64, gamma: f64, alpha: f64) -> Result<Self> {
        let t = Self { tau, gamma, alpha };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(DpdError::Domain(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DpdError::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DpdError::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    GenericEigen,
    NormalSimpleClosed,
    NormalCompositeClosed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    /// Closed forms for normal regression where they apply.
    #[default]
    Auto,
    Generic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub fit: FitOptions,
    pub hessian: HessianMode,
    pub series: SeriesControl,
    pub method: MethodChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub null_dist: QuadFormDist,
    pub critical_value: f64,
    pub p_value: f64,
    /// Truncation bound on `p_value` (zero for the closed forms).
    pub p_value_bound: f64,
    pub method: TestMethod,
    pub estimate: ParamVector,
    pub restricted_estimate: Option<ParamVector>,
    pub n: usize,
}

impl TestReport {
    pub fn rejects(&self) -> bool {
        self.statistic > self.critical_value
    }
}

/// `d_γ(N(m₁, s₁²), N(m₂, s₂²))` in closed form.
pub fn normal_pair_divergence(m1: f64, s1: f64, m2: f64, s2: f64, gamma: f64) -> f64 {
    let dm = m1 - m2;
    if gamma == 0.0 {
        return (s2 / s1).ln() + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let int1 = (two_pi.sqrt() * s1).powf(-gamma) / (1.0 + gamma).sqrt();
    let int2 = (two_pi.sqrt() * s2).powf(-gamma) / (1.0 + gamma).sqrt();
    let v = gamma * s1 * s1 + s2 * s2;
    let cross = two_pi.powf(-gamma / 2.0) * s2.powf(1.0 - gamma) / v.sqrt() * (-gamma * dm * dm / (2.0 * v)).exp();
    (int2 - (1.0 + 1.0 / gamma) * cross + int1 / gamma).max(0.0)
}

fn statistic(model: &Model, x: &DMatrix<f64>, a: &ParamVector, b: &ParamVector, gamma: f64, closed: bool) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..x.nrows() {
        s += if closed {
            normal_pair_divergence(model.mean(x, i, a), model.sigma(a), model.mean(x, i, b), model.sigma(b), gamma)
        } else {
            model.dpd_divergence(x, i, a, b, gamma)?
        };
    }
    Ok(2.0 * s)
}

/// `Σᵢ wᵢ f(i) / Σᵢ wᵢ` over rows with positive weight.
pub(crate) fn weighted_mean<F>(w: &[f64], d: usize, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(usize) -> Result<DMatrix<f64>>,
{
    let mut acc = DMatrix::zeros(d, d);
    let mut total = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi > 0.0 {
            acc += f(i)? * wi;
            total += wi;
        }
    }
    Ok(acc / total)
}

/// `(Ψ, Ω, A)` averaged over the rows of `x` with weights `w`.
pub(crate) fn design_moments(
    model: &Model,
    x: &DMatrix<f64>,
    w: &[f64],
    theta: &ParamVector,
    tau: f64,
    gamma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = model.dim(x.ncols());
    let psi = weighted_mean(w, d, |i| model.j_matrix(x, i, theta, tau))?;
    let omega = weighted_mean(w, d, |i| {
        let xi = model.xi_vector(x, i, theta, tau)?;
        Ok(model.j_matrix(x, i, theta, 2.0 * tau)? - &xi * xi.transpose())
    })?;
    let a = weighted_mean(w, d, |i| model.a_matrix(x, i, theta, gamma))?;
    Ok((linalg::symmetrize(&psi), linalg::symmetrize(&omega), linalg::symmetrize(&a)))
}

/// Law of `W'AW` for `W ~ N(μ, Σ)` with `Σ` possibly singular.
///
/// Writing `Σ = CCᵀ` with `C` of full column rank and `CᵀAC = EZEᵀ`, the form
/// is `Σⱼ ζⱼ χ²₁(δⱼ)` with `√δ = EᵀC⁺μ`. `CᵀAC` has the nonzero spectrum of
/// `Σ^{1/2}AΣ^{1/2}`. A component of μ outside the range of Σ is ignored.
#[derive(Clone, Debug)]
struct QuadLaw {
    null: QuadFormDist,
    proj: DMatrix<f64>,
}

impl QuadLaw {
    fn new(sigma: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Self> {
        let (lam, v) = linalg::sym_eigen(sigma);
        let top = lam.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(DpdError::Singular {
                what: "asymptotic covariance".into(),
                cond: f64::INFINITY,
            });
        }
        let keep: Vec<usize> = (0..lam.len()).filter(|&j| lam[j] > RANK_TOLERANCE * top).collect();
        let d = sigma.nrows();
        let k = keep.len();
        let mut c = DMatrix::zeros(d, k);
        let mut c_pinv = DMatrix::zeros(k, d);
        for (col, &j) in keep.iter().enumerate() {
            let s = lam[j].sqrt();
            c.set_column(col, &(v.column(j) * s));
            c_pinv.set_row(col, &(v.column(j).transpose() / s));
        }
        let inner = linalg::symmetrize(&(c.transpose() * a * &c));
        let (z, e) = linalg::sym_eigen(&inner);
        let ztop = z.iter().cloned().fold(0.0, f64::max);
        let keep_z: Vec<usize> = (0..z.len()).filter(|&j| z[j] > RANK_TOLERANCE * ztop).collect();
        let mut proj = DMatrix::zeros(keep_z.len(), d);
        for (row, &j) in keep_z.iter().enumerate() {
            proj.set_row(row, &(e.column(j).transpose() * &c_pinv));
        }
        let weights = keep_z.iter().map(|&j| z[j]).collect::<Vec<_>>();
        Ok(Self {
            null: QuadFormDist::with_tolerance(weights, vec![0.0; keep_z.len()], 0.0)?,
            proj,
        })
    }

    fn shifted(&self, mu: &DVector<f64>) -> Result<QuadFormDist> {
        let s = &self.proj * mu;
        self.null.with_noncentralities(s.iter().map(|v| v * v).collect())
    }
}

fn null_from_weights(weights: Vec<f64>, alpha: f64, ctl: &SeriesControl) -> Result<(QuadFormDist, f64)> {
    let null = QuadFormDist::central(weights)?;
    let crit = quadform::qf_quantile(&null, 1.0 - alpha, ctl)?;
    Ok((null, crit))
}

fn closed_simple_scale(model: &Model) -> Option<f64> {
    match (model.family, model.scale) {
        (Family::NormalLinear, ScaleRole::Fixed(s)) => Some(s),
        _ => None,
    }
}

fn closed_composite_applies(model: &Model, c: &LinearConstraint) -> bool {
    model.family == Family::NormalLinear && !(model.scale_is_free() && matches!(c.scale_role, ScaleRole::Fixed(_)))
}

pub fn dpdts_simple(model: &Model, data: &Dataset, theta0: &ParamVector, tuning: &Tuning) -> Result<TestReport> {
    dpdts_simple_with(model, data, theta0, tuning, &TestOptions::default(), None)
}

/// Simple test, reusing `fit` when it was computed at the same τ.
pub fn dpdts_simple_with(
    model: &Model,
    data: &Dataset,
    theta0: &ParamVector,
    tuning: &Tuning,
    opts: &TestOptions,
    fit: Option<&MdpdeFit>,
) -> Result<TestReport> {
    tuning.validate()?;
    model.validate_param(theta0, data.p())?;
    let owned;
    let fit = match fit {
        Some(f) if f.tau == tuning.tau => f,
        _ => {
            owned = estimate::fit_mdpde_with(model, data, tuning.tau, None, &opts.fit)?;
            &owned
        }
    };
    let x = data.design();
    let closed = closed_simple_scale(model).filter(|_| opts.method == MethodChoice::Auto);
    let t = statistic(model, x, &fit.theta_hat, theta0, tuning.gamma, closed.is_some())?;
    let (null, crit, p, bound, method) = if let Some(s0) = closed {
        let z = normal_null_weight(tuning.gamma, tuning.tau, s0);
        let df = data.p() as u32;
        let crit = z * quadform::chisq_quantile(1.0 - tuning.alpha, df, 0.0)?;
        let p = quadform::chisq_sf(t / z, df, 0.0)?;
        (QuadFormDist::central(vec![z; data.p()])?, crit, p, 0.0, TestMethod::NormalSimpleClosed)
    } else {
        let w = vec![1.0; data.n()];
        let (psi, omega, a) = design_moments(model, x, &w, theta0, tuning.tau, tuning.gamma)?;
        let psi_inv = linalg::inverse(&psi, "Psi_n")?;
        let sigma = linalg::symmetrize(&(&psi_inv * omega * &psi_inv));
        let law = QuadLaw::new(&sigma, &a)?;
        let (null, crit) = null_from_weights(law.null.weights().to_vec(), tuning.alpha, &opts.series)?;
        let tail = quadform::qf_upper_tail(&null, t, &opts.series)?;
        (null, crit, tail.prob, tail.residual_bound, TestMethod::GenericEigen)
    };
    Ok(TestReport {
        statistic: t,
        tau: tuning.tau,
        gamma: tuning.gamma,
        alpha: tuning.alpha,
        null_dist: null,
        critical_value: crit,
        p_value: if t == 0.0 { 1.0 } else { p },
        p_value_bound: bound,
        method,
        estimate: fit.theta_hat.clone(),
        restricted_estimate: None,
        n: data.n(),
    })
}

pub fn dpdts_composite(model: &Model, data: &Dataset, constraint: &LinearConstraint, tuning: &Tuning) -> Result<TestReport> {
    dpdts_composite_with(model, data, constraint, tuning, &TestOptions::default(), None)
}

/// Composite test, reusing `fits` when computed at the same τ.
pub fn dpdts_composite_with(
    model: &Model,
    data: &Dataset,
    constraint: &LinearConstraint,
    tuning: &Tuning,
    opts: &TestOptions,
    fits: Option<(&MdpdeFit, &RmdpdeFit)>,
) -> Result<TestReport> {
    tuning.validate()?;
    constraint.validate(data.p())?;
    let owned;
    let (fit, rfit) = match fits {
        Some((f, r)) if f.tau == tuning.tau && r.tau == tuning.tau => (f, r),
        _ => {
            let f = estimate::fit_mdpde_with(model, data, tuning.tau, None, &opts.fit)?;
            let r = restrict::fit_rmdpde_with(model, data, tuning.tau, constraint, Some(&f.theta_hat), &opts.fit, opts.hessian)?;
            owned = (f, r);
            (&owned.0, &owned.1)
        }
    };
    let x = data.design();
    let closed = opts.method == MethodChoice::Auto && closed_composite_applies(model, constraint);
    let s = statistic(model, x, &fit.theta_hat, &rfit.theta_tilde, tuning.gamma, closed)?;
    let (null, crit, p, bound, method) = if closed && constraint.r() > 0 {
        let z = normal_null_weight(tuning.gamma, tuning.tau, model.sigma(&rfit.theta_tilde));
        let df = constraint.r() as u32;
        let crit = z * quadform::chisq_quantile(1.0 - tuning.alpha, df, 0.0)?;
        let p = quadform::chisq_sf(s / z, df, 0.0)?;
        (QuadFormDist::central(vec![z; constraint.r()])?, crit, p, 0.0, TestMethod::NormalCompositeClosed)
    } else {
        let theta = &rfit.theta_tilde;
        let w = vec![1.0; data.n()];
        let (psi, _, a) = design_moments(model, x, &w, theta, tuning.tau, tuning.gamma)?;
        let m = linalg::inverse(&psi, "Psi_n")? - &rfit.pn_matrix;
        let sigma = linalg::symmetrize(&(&m * &rfit.omega_n * &m));
        let law = QuadLaw::new(&sigma, &a);
        let weights = match law {
            Ok(l) => l.null.weights().to_vec(),
            // Nothing is tested when the null fixes no direction.
            Err(DpdError::Singular { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        if weights.is_empty() {
            let null = QuadFormDist::central(Vec::new())?;
            (null, 0.0, 1.0, 0.0, TestMethod::GenericEigen)
        } else {
            let (null, crit) = null_from_weights(weights, tuning.alpha, &opts.series)?;
            let tail = quadform::qf_upper_tail(&null, s, &opts.series)?;
            (null, crit, tail.prob, tail.residual_bound, TestMethod::GenericEigen)
        }
    };
    Ok(TestReport {
        statistic: s,
        tau: tuning.tau,
        gamma: tuning.gamma,
        alpha: tuning.alpha,
        null_dist: null,
        critical_value: crit,
        p_value: if s == 0.0 { 1.0 } else { p },
        p_value_bound: bound,
        method,
        estimate: fit.theta_hat.clone(),
        restricted_estimate: Some(rfit.theta_tilde.clone()),
        n: data.n(),
    })
}

pub fn dpdts(model: &Model, data: &Dataset, hypothesis: &Hypothesis, tuning: &Tuning, opts: &TestOptions) -> Result<TestReport> {
    match hypothesis {
        Hypothesis::Simple { theta0 } => dpdts_simple_with(model, data, theta0, tuning, opts, None),
        Hypothesis::Composite { constraint } => dpdts_composite_with(model, data, constraint, tuning, opts, None),
    }
}

/// Distinct design rows with multiplicities.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDesign {
    pub rows: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl WeightedDesign {
    pub fn unit(x: DMatrix<f64>) -> Self {
        let n = x.nrows();
        Self {
            rows: x,
            weights: vec![1.0; n],
        }
    }

    pub fn n(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Design of a sample of size `n`, used by the power and sample-size tools.
pub trait DesignGenerator {
    fn p(&self) -> usize;
    fn design(&self, n: usize) -> Result<WeightedDesign>;
}

/// Cycles through the rows of a base design: observation `i` has row `i mod m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CyclicDesign {
    base: DMatrix<f64>,
}

impl CyclicDesign {
    pub fn new(base: DMatrix<f64>) -> Result<Self> {
        if base.nrows() == 0 || base.iter().any(|v| !v.is_finite()) {
            return Err(DpdError::Invalid("base design must be non-empty and finite".into()));
        }
        crate::models::design_diagnostics(&base).require_full_rank()?;
        Ok(Self { base })
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }
}

impl DesignGenerator for CyclicDesign {
    fn p(&self) -> usize {
        self.base.ncols()
    }

    fn design(&self, n: usize) -> Result<WeightedDesign> {
        let m = self.base.nrows();
        let weights: Vec<f64> = (0..m).map(|i| (n / m + usize::from(i < n % m)) as f64).collect();
        let used: Vec<usize> = (0..m).filter(|&i| weights[i] > 0.0).collect();
        let sub = self.base.select_rows(&used);
        if linalg::numerical_rank(&sub, 1e-10) < self.base.ncols() {
            return Err(DpdError::SingularDesign {
                rank: linalg::numerical_rank(&sub, 1e-10),
                p: self.base.ncols(),
            });
        }
        Ok(WeightedDesign {
            rows: self.base.clone(),
            weights,
        })
    }
}

/// Normal approximation to the power at a fixed alternative θ*.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerApprox {
    pub power: f64,
    pub n: usize,
    /// `Σᵢ d_γ(fᵢ(θ*), fᵢ(θ₀))`, θ₀ the population restricted estimator for a composite null.
    pub divergence_sum: f64,
    /// `σ_{τ,γ}`.
    pub sigma: f64,
    pub critical_value: f64,
    pub theta0: ParamVector,
    /// Set when σ vanishes; the power is then reported as α.
    pub degenerate: bool,
}

/// `πₙ = 1 − Φ((t_α/2 − Σᵢdᵢ)/(√n σ))` on the design `generator.design(n)`.
pub fn approx_power(
    model: &Model,
    generator: &dyn DesignGenerator,
    hypothesis: &Hypothesis,
    theta_star: &ParamVector,
    n: usize,
    tuning: &Tuning,
) -> Result<PowerApprox> {
    tuning.validate()?;
    let p = generator.p();
    hypothesis.validate(model, p)?;
    model.validate_param(theta_star, p)?;
    let wd = generator.design(n)?;
    let (x, w) = (&wd.rows, &wd.weights);
    let nf = wd.n();
    let (tau, gamma) = (tuning.tau, tuning.gamma);
    let d = model.dim(p);
    let series = SeriesControl::default();

    let (theta0, inner_free) = match hypothesis {
        Hypothesis::Simple { theta0 } => (theta0.clone(), None),
        Hypothesis::Composite { constraint } => (
            restrict::population_rmdpde_weighted(model, x, w, theta_star, tau, constraint)?,
            Some(constraint),
        ),
    };
    let mut dsum = 0.0;
    let mut m1 = DVector::zeros(d);
    let mut m2 = DVector::zeros(d);
    for i in 0..x.nrows() {
        if w[i] > 0.0 {
            dsum += w[i] * model.dpd_divergence(x, i, theta_star, &theta0, gamma)?;
            let (g1, g2) = model.divergence_gradients(x, i, theta_star, &theta0, gamma)?;
            m1 += g1 * w[i];
            m2 += g2 * w[i];
        }
    }
    m1 /= nf;
    m2 /= nf;
    let scale = model.flatten(theta_star).amax().max(1.0);
    if dsum / nf <= 1e-14 * scale || (model.flatten(theta_star) - model.flatten(&theta0)).amax() <= 1e-10 * scale {
        return Err(DpdError::DegenerateAlternative(
            "theta* coincides with the null; the approximation is undefined".into(),
        ));
    }

    let (psi_s, omega_s, _) = design_moments(model, x, w, theta_star, tau, gamma)?;
    let psi_s_inv = linalg::inverse(&psi_s, "Psi_n(theta*)")?;
    let sigma_star = linalg::symmetrize(&(&psi_s_inv * &omega_s * &psi_s_inv));
    let (psi0, omega0, a0) = design_moments(model, x, w, &theta0, tau, gamma)?;
    let psi0_inv = linalg::inverse(&psi0, "Psi_n(theta0)")?;

    let (var, null_sigma) = match inner_free {
        None => {
            let var = (m1.transpose() * &sigma_star * &m1)[(0, 0)];
            (var, linalg::symmetrize(&(&psi0_inv * &omega0 * &psi0_inv)))
        }
        Some(c) => {
            let (_, ups) = c.theta_bases(model);
            let pm = restrict::pn_from_hessian(&psi0, &ups)?;
            let cross = weighted_mean(w, d, |i| model.weighted_score_covariance(x, i, theta_star, &theta0, tau))?;
            let a12 = &psi_s_inv * cross * pm.transpose();
            let v2 = &pm * &omega0 * &pm;
            let var = (m1.transpose() * &sigma_star * &m1)[(0, 0)]
                + 2.0 * (m1.transpose() * &a12 * &m2)[(0, 0)]
                + (m2.transpose() * v2 * &m2)[(0, 0)];
            let mm = &psi0_inv - &pm;
            (var, linalg::symmetrize(&(&mm * &omega0 * &mm)))
        }
    };
    let law = QuadLaw::new(&null_sigma, &a0)?;
    let (_, crit) = null_from_weights(law.null.weights().to_vec(), tuning.alpha, &series)?;
    let sd = var.max(0.0).sqrt();
    let gscale = m1.norm() + m2.norm();
    if sd <= 1e-12 * gscale.max(1e-300) * sigma_star.amax().sqrt().max(1.0) || sd == 0.0 {
        if inner_free.is_some() {
            return Ok(PowerApprox {
                power: tuning.alpha,
                n,
                divergence_sum: dsum,
                sigma: sd,
                critical_value: crit,
                theta0,
                degenerate: true,
            });
        }
        return Err(DpdError::DegenerateAlternative("sigma_{tau,gamma}(theta*) vanishes".into()));
    }
    let z = (crit / 2.0 - dsum) / (nf.sqrt() * sd);
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(PowerApprox {
        power: std.sf(z),
        n,
        divergence_sum: dsum,
        sigma: sd,
        critical_value: crit,
        theta0,
        degenerate: false,
    })
}

pub const SAMPLE_SIZE_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub n: usize,
    pub power: f64,
}

/// Least `n` with `approx_power(n) ≥ η`, by doubling then bisection. The
/// search keeps `power(lo) < η ≤ power(hi)`, so the result always satisfies
/// `power(n*) ≥ η > power(n* − 1)`.
pub fn required_sample_size(
    model: &Model,
    generator: &dyn DesignGenerator,
    hypothesis: &Hypothesis,
    theta_star: &ParamVector,
    eta: f64,
    tuning: &Tuning,
) -> Result<SampleSize> {
    tuning.validate()?;
    if !(eta > tuning.alpha && eta < 1.0) {
        return Err(DpdError::Domain(format!("target power must lie in (alpha, 1), got {eta}")));
    }
    let p = generator.p();
    let power = |n: usize| -> Result<f64> {
        let r = approx_power(model, generator, hypothesis, theta_star, n, tuning)?;
        if r.degenerate {
            return Err(DpdError::DegenerateAlternative("sigma_{tau,gamma} vanishes".into()));
        }
        Ok(r.power)
    };
    // Smallest n whose design supports the fit.
    let mut lo = model.dim(p).max(1);
    let mut first = None;
    while lo <= SAMPLE_SIZE_CAP {
        match power(lo) {
            Ok(v) => {
                first = Some(v);
                break;
            }
            Err(DpdError::SingularDesign { .. }) | Err(DpdError::Singular { .. }) => lo += 1,
            Err(e) => return Err(e),
        }
        if lo > 64 * p.max(1) {
            return Err(DpdError::Invalid("design generator never becomes full rank".into()));
        }
    }
    let Some(p_lo) = first else {
        return Err(DpdError::UnreachablePower { target: eta, cap: SAMPLE_SIZE_CAP });
    };
    if p_lo >= eta {
        return Ok(SampleSize { n: lo, power: p_lo });
    }
    let mut hi = lo;
    let mut p_hi = p_lo;
    while p_hi < eta {
        if hi == SAMPLE_SIZE_CAP {
            return Err(DpdError::UnreachablePower { target: eta, cap: SAMPLE_SIZE_CAP });
        }
        lo = hi;
        hi = (hi * 2).min(SAMPLE_SIZE_CAP);
        p_hi = power(hi)?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let pm = power(mid)?;
        if pm >= eta {
            hi = mid;
            p_hi = pm;
        } else {
            lo = mid;
        }
    }
    Ok(SampleSize { n: hi, power: p_hi })
}

/// `1 − G_{p,δ}(χ²_{p,α})` with `δ = t/υ_τ^β`, `t = Δ'ΣₓΔ`: the contiguous
/// power of the normal simple test with known σ.
pub fn normal_contiguous_power(p: usize, t: f64, tau: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(DpdError::Domain(format!("t = {t} must be >= 0")));
    }
    let df = p as u32;
    let crit = quadform::chisq_quantile(1.0 - alpha, df, 0.0)?;
    quadform::chisq_sf(crit, df, t / normal_beta_variance(tau, sigma))
}

/// Asymptotic power under contiguous alternatives `θₙ = θ₀ + Δ/√n`, with or
/// without contamination `(ε/√n)` at points `t`.
///
/// The test statistic behaves as `W'AW` with `W ~ N(μ, Σ_W)`. For a simple null
/// `μ = Δ̃ = Δ + ε·IF`, `Σ_W = Σ(θ₀)`, with `IF = Ψ⁻¹(1/n)ΣᵢDᵢ(tᵢ;θ₀)`. For a
/// composite null `μ = (Ψ⁻¹ − P)(ΨΔ + ε(1/n)ΣᵢDᵢ(tᵢ;θ₀))` and
/// `Σ_W = (Ψ⁻¹ − P)Ω(Ψ⁻¹ − P)`, with θ₀ a point of the null.
#[derive(Clone, Debug)]
pub struct LocalPower {
    model: Model,
    design: DMatrix<f64>,
    theta0: ParamVector,
    tau: f64,
    alpha: f64,
    law: QuadLaw,
    critical: f64,
    shift: DMatrix<f64>,
    contamination: DMatrix<f64>,
    w_cov: DMatrix<f64>,
    series: SeriesControl,
    /// `(p, σ₀)` when the normal known-σ simple closed form applies.
    fast: Option<(usize, f64)>,
}

impl LocalPower {
    /// `base` is the null point for a composite hypothesis and is ignored for a simple one.
    pub fn new(
        model: &Model,
        design: &DMatrix<f64>,
        hypothesis: &Hypothesis,
        base: Option<&ParamVector>,
        tuning: &Tuning,
    ) -> Result<Self> {
        tuning.validate()?;
        let p = design.ncols();
        hypothesis.validate(model, p)?;
        crate::models::design_diagnostics(design).require_full_rank()?;
        let theta0 = match (hypothesis, base) {
            (Hypothesis::Simple { theta0 }, _) => theta0.clone(),
            (Hypothesis::Composite { .. }, Some(b)) => {
                model.validate_param(b, p)?;
                if !hypothesis.contains(model, b, 1e-8) {
                    return Err(DpdError::Invalid("null point does not satisfy the constraint".into()));
                }
                b.clone()
            }
            (Hypothesis::Composite { .. }, None) => {
                return Err(DpdError::Invalid("a composite hypothesis needs a null point theta0".into()))
            }
        };
        let w = vec![1.0; design.nrows()];
        let (psi, omega, a) = design_moments(model, design, &w, &theta0, tuning.tau, tuning.gamma)?;
        let psi_inv = linalg::inverse(&psi, "Psi_n")?;
        let (shift, contamination, w_cov) = match hypothesis {
            Hypothesis::Simple { .. } => {
                let d = psi.nrows();
                let cov = linalg::symmetrize(&(&psi_inv * &omega * &psi_inv));
                (DMatrix::identity(d, d), psi_inv.clone(), cov)
            }
            Hypothesis::Composite { constraint } => {
                let (_, ups) = constraint.theta_bases(model);
                let m = &psi_inv - restrict::pn_from_hessian(&psi, &ups)?;
                let cov = linalg::symmetrize(&(&m * &omega * &m));
                (&m * &psi, m, cov)
            }
        };
        let law = QuadLaw::new(&w_cov, &a)?;
        let series = SeriesControl::default();
        let fast = match hypothesis {
            Hypothesis::Simple { .. } => closed_simple_scale(model).map(|s| (p, s)),
            _ => None,
        };
        let critical = match fast {
            Some((p, s)) => normal_null_weight(tuning.gamma, tuning.tau, s) * quadform::chisq_quantile(1.0 - tuning.alpha, p as u32, 0.0)?,
            None => quadform::qf_quantile(&law.null, 1.0 - tuning.alpha, &series)?,
        };
        Ok(Self {
            model: *model,
            design: design.clone(),
            theta0,
            tau: tuning.tau,
            alpha: tuning.alpha,
            law,
            critical,
            shift,
            contamination,
            w_cov,
            series,
            fast,
        })
    }

    pub fn with_series(mut self, series: SeriesControl) -> Self {
        self.series = series;
        self
    }

    pub fn critical_value(&self) -> f64 {
        self.critical
    }

    pub fn null_dist(&self) -> &QuadFormDist {
        &self.law.null
    }

    pub fn theta0(&self) -> &ParamVector {
        &self.theta0
    }

    /// Covariance of `W`.
    pub fn w_covariance(&self) -> &DMatrix<f64> {
        &self.w_cov
    }

    /// Mean of `W` at local alternative `Δ` without contamination.
    pub fn mean_shift(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        if delta.len() != self.shift.ncols() || delta.iter().any(|v| !v.is_finite()) {
            return Err(DpdError::Invalid(format!(
                "Delta must be a finite vector of length {}",
                self.shift.ncols()
            )));
        }
        Ok(&self.shift * delta)
    }

    /// Change in the mean of `W` per unit ε for contamination at `tᵢ` in every direction.
    pub fn contamination_shift(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.design.nrows();
        if t.len() != n {
            return Err(DpdError::Invalid(format!("need {n} contamination points, got {}", t.len())));
        }
        let pairs: Vec<(usize, f64)> = t.iter().cloned().enumerate().collect();
        self.contamination_shift_at(&pairs)
    }

    /// As [`Self::contamination_shift`] for contamination in the listed `(i, tᵢ)` only.
    pub fn contamination_shift_at(&self, points: &[(usize, f64)]) -> Result<DVector<f64>> {
        let n = self.design.nrows();
        let mut acc = DVector::zeros(self.shift.nrows());
        for &(i, t) in points {
            if i >= n {
                return Err(DpdError::Invalid(format!("direction {} outside 1..{n}", i + 1)));
            }
            acc += self.model.weighted_score(&self.design, i, t, &self.theta0, self.tau)?;
        }
        Ok(&self.contamination * (acc / n as f64))
    }

    /// `P(W'AW > t_α)` for `W ~ N(mean, Σ_W)` through the mixture series.
    pub fn tail_at_mean(&self, mean: &DVector<f64>) -> Result<TailProbability> {
        let dist = self.law.shifted(mean)?;
        quadform::qf_upper_tail(&dist, self.critical, &self.series)
    }

    pub fn contiguous_power(&self, delta: &DVector<f64>) -> Result<f64> {
        let mu = self.mean_shift(delta)?;
        if let Some((p, s)) = self.fast {
            let sx = self.design.transpose() * &self.design / self.design.nrows() as f64;
            let t = (delta.transpose() * sx * delta)[(0, 0)];
            return normal_contiguous_power(p, t, self.tau, s, self.alpha);
        }
        if mu.iter().all(|&v| v == 0.0) {
            return Ok(self.alpha);
        }
        Ok(self.tail_at_mean(&mu)?.prob)
    }

    /// Power under `(1 − ε/√n)f(θₙ) + (ε/√n)∧_t`; the level when `Δ = 0`.
    pub fn contaminated_power(&self, delta: &DVector<f64>, eps: f64, t: &DVector<f64>) -> Result<f64> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(DpdError::Domain(format!("epsilon must be >= 0, got {eps}")));
        }
        if eps == 0.0 {
            return self.contiguous_power(delta);
        }
        let mu = self.mean_shift(delta)? + self.contamination_shift(t)? * eps;
        Ok(self.tail_at_mean(&mu)?.prob)
    }

    /// Gradient of the power in the mean of `W` by central differences,
    /// step `1e-4·max(|μⱼ|, sdⱼ)`.
    pub fn power_gradient(&self, mean: &DVector<f64>) -> Result<DVector<f64>> {
        let d = mean.len();
        let mut k = DVector::zeros(d);
        for j in 0..d {
            let sd = self.w_cov[(j, j)].max(0.0).sqrt();
            let h = 1e-4 * mean[j].abs().max(sd);
            if h == 0.0 {
                continue;
            }
            let mut up = mean.clone();
            let mut dn = mean.clone();
            up[j] += h;
            dn[j] -= h;
            k[j] = (self.tail_at_mean(&up)?.prob - self.tail_at_mean(&dn)?.prob) / (2.0 * h);
        }
        Ok(k)
    }
}
