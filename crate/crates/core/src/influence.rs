//! Fixed-sample influence functions of the estimators and tests, and the
//! level/power influence functions.
//!
//! Contamination replaces `Gᵢ` by `(1−ε)Gᵢ + ε∧_{tᵢ}` in one direction `i₀` or
//! in every direction. All quantities are evaluated at a model point θ₀.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpdtest::{design_moments, Hypothesis, LocalPower, Tuning};
use crate::error::{DpdError, Result};
use crate::linalg;
use crate::models::{Family, Model, ParamVector};
use crate::quadform::SeriesControl;
use crate::restrict::LinearConstraint;

pub const DEFAULT_GRID_POINTS: usize = 401;
/// Half-width of the default grid in standardised residual units.
pub const DEFAULT_HALF_WIDTH: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directions {
    /// Zero-based observation index.
    Single(usize),
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub directions: Directions,
    /// One point for `Single`, n points for `All`.
    pub points: Vec<f64>,
    /// Contamination mass; only read by the level/power computations.
    pub epsilon: f64,
}

impl ContaminationSpec {
    pub fn single(i0: usize, t: f64) -> Self {
        Self {
            directions: Directions::Single(i0),
            points: vec![t],
            epsilon: 0.0,
        }
    }

    pub fn all(points: Vec<f64>) -> Self {
        Self {
            directions: Directions::All,
            points,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self.directions {
            Directions::Single(i) if i >= n => {
                return Err(DpdError::Invalid(format!("direction {} outside 1..{n}", i + 1)))
            }
            Directions::Single(_) if self.points.len() != 1 => {
                return Err(DpdError::Invalid("single-direction contamination takes one point".into()))
            }
            Directions::All if self.points.len() != n => {
                return Err(DpdError::Invalid(format!("need {n} contamination points, got {}", self.points.len())))
            }
            _ => {}
        }
        if self.points.iter().any(|t| !t.is_finite()) {
            return Err(DpdError::Invalid("contamination points must be finite".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(DpdError::Domain(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// `(i, tᵢ)` for each contaminated direction.
    pub fn pairs(&self) -> Vec<(usize, f64)> {
        match self.directions {
            Directions::Single(i) => vec![(i, self.points[0])],
            Directions::All => self.points.iter().cloned().enumerate().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IfOrder {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IfTarget {
    Estimator,
    RestrictedEstimator,
    SimpleTest,
    CompositeTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IfValue {
    Vector(DVector<f64>),
    Scalar(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfReport {
    pub order: IfOrder,
    pub target: IfTarget,
    pub value: IfValue,
    /// From a grid scan in the contamination point, when one was run.
    pub bounded_in_t: Option<bool>,
}

/// `(1/n)Σ_{contaminated i} Dᵢ(tᵢ;θ)`.
fn mean_weighted_score(model: &Model, x: &DMatrix<f64>, theta: &ParamVector, tau: f64, spec: &ContaminationSpec) -> Result<DVector<f64>> {
    spec.validate(x.nrows())?;
    let mut acc = DVector::zeros(model.dim(x.ncols()));
    for (i, t) in spec.pairs() {
        acc += model.weighted_score(x, i, t, theta, tau)?;
    }
    Ok(acc / x.nrows() as f64)
}

fn psi_at(model: &Model, x: &DMatrix<f64>, theta: &ParamVector, tau: f64) -> Result<DMatrix<f64>> {
    let w = vec![1.0; x.nrows()];
    Ok(design_moments(model, x, &w, theta, tau, 0.0)?.0)
}

/// IF of the MDPDE: `Ψₙ(θ)⁻¹(1/n)Σᵢ Dᵢ(tᵢ;θ)`.
pub fn if_mdpde(model: &Model, x: &DMatrix<f64>, theta: &ParamVector, tau: f64, spec: &ContaminationSpec) -> Result<DVector<f64>> {
    model.validate_param(theta, x.ncols())?;
    let dbar = mean_weighted_score(model, x, theta, tau, spec)?;
    let psi = psi_at(model, x, theta, tau)?;
    let lu = psi.clone().lu();
    lu.solve(&dbar).ok_or_else(|| DpdError::Singular {
        what: "Psi_n".into(),
        cond: linalg::condition_number(&psi),
    })
}

/// IF of the restricted MDPDE: `Q⁻¹Ψ⁽⁰⁾ᵀ(1/n)ΣD⁽⁰⁾` with `Q = Ψ⁽⁰⁾ᵀΨ⁽⁰⁾ + ΥΥᵀ`.
///
/// The restricted score is `u⁽⁰⁾ = Πu` with `Π = B̃B̃ᵀ` the projector onto the
/// tangent space of the null, so `Ψ⁽⁰⁾ = ΠΨ` and `D⁽⁰⁾ = ΠD`. All-direction
/// contamination sums the single-direction values.
pub fn if_rmdpde(
    model: &Model,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    tau: f64,
    constraint: &LinearConstraint,
    spec: &ContaminationSpec,
) -> Result<DVector<f64>> {
    model.validate_param(theta, x.ncols())?;
    constraint.validate(x.ncols())?;
    let (bt, ups) = constraint.theta_bases(model);
    let proj = &bt * bt.transpose();
    let psi0 = &proj * psi_at(model, x, theta, tau)?;
    let d0 = &proj * mean_weighted_score(model, x, theta, tau, spec)?;
    let q = psi0.transpose() * &psi0 + &ups * ups.transpose();
    let qi = linalg::inverse(&q, "Q")?;
    Ok(qi * psi0.transpose() * d0)
}

/// First-order IF of the test functional `Σᵢ d_γ(fᵢ(U), fᵢ(θ₀))` at the null,
/// `Σᵢ M⁽ⁱ⁾ᵀ IF`; it vanishes because every `M⁽ⁱ⁾(θ₀)` does.
pub fn if1_test(
    model: &Model,
    x: &DMatrix<f64>,
    hypothesis: &Hypothesis,
    theta0: &ParamVector,
    tuning: &Tuning,
    spec: &ContaminationSpec,
) -> Result<f64> {
    let if_hat = if_mdpde(model, x, theta0, tuning.tau, spec)?;
    let if_til = match hypothesis {
        Hypothesis::Simple { .. } => DVector::zeros(if_hat.len()),
        Hypothesis::Composite { constraint } => if_rmdpde(model, x, theta0, tuning.tau, constraint, spec)?,
    };
    let mut v = 0.0;
    for i in 0..x.nrows() {
        let (g1, g2) = model.divergence_gradients(x, i, theta0, theta0, tuning.gamma)?;
        v += g1.dot(&if_hat) + g2.dot(&if_til);
    }
    Ok(v)
}

/// Second-order IF at the null of `Σᵢ d_γ(fᵢ(θ̂), fᵢ(θ₀))` (simple) or
/// `Σᵢ d_γ(fᵢ(θ̂), fᵢ(θ̃))` (composite): `n·DᵀAₙD` with `D = IF(θ̂)` or
/// `IF(θ̂) − IF(θ̃)`. The simple single-direction case equals
/// `(1/n)Dᵢ₀ᵀΨ⁻¹AΨ⁻¹Dᵢ₀`. For a composite null `theta0` must satisfy it.
pub fn if2_test(
    model: &Model,
    x: &DMatrix<f64>,
    hypothesis: &Hypothesis,
    theta0: Option<&ParamVector>,
    tuning: &Tuning,
    spec: &ContaminationSpec,
) -> Result<f64> {
    hypothesis.validate(model, x.ncols())?;
    let (theta, diff) = match (hypothesis, theta0) {
        (Hypothesis::Simple { theta0 }, _) => (theta0.clone(), if_mdpde(model, x, theta0, tuning.tau, spec)?),
        (Hypothesis::Composite { constraint }, Some(th)) => {
            if !hypothesis.contains(model, th, 1e-8) {
                return Err(DpdError::Invalid("null point does not satisfy the constraint".into()));
            }
            let d = if_mdpde(model, x, th, tuning.tau, spec)? - if_rmdpde(model, x, th, tuning.tau, constraint, spec)?;
            (th.clone(), d)
        }
        (Hypothesis::Composite { .. }, None) => {
            return Err(DpdError::Invalid("a composite hypothesis needs a null point theta0".into()))
        }
    };
    let w = vec![1.0; x.nrows()];
    let (_, _, a) = design_moments(model, x, &w, &theta, tuning.tau, tuning.gamma)?;
    Ok((x.nrows() as f64 * (diff.transpose() * a * &diff)[(0, 0)]).max(0.0))
}

/// Normal regression with known σ₀, simple null, direction i₀:
/// `(1+γ)ζ_γ(1+τ)³[xᵢ₀'(X'X)⁻¹xᵢ₀] r² e^{−τr²/σ₀²}` with `r = t − xᵢ₀'β₀`.
pub fn normal_if2_simple(x: &DMatrix<f64>, i0: usize, t: f64, beta0: &DVector<f64>, sigma0: f64, tau: f64, gamma: f64) -> Result<f64> {
    let xtx_inv = linalg::spd_inverse(&(x.transpose() * x), "X'X")?;
    let xi = x.row(i0).transpose();
    let lev = (xi.transpose() * xtx_inv * &xi)[(0, 0)];
    let r = t - xi.dot(beta0);
    let zeta = crate::models::normal_zeta(gamma, sigma0);
    Ok((1.0 + gamma) * zeta * (1.0 + tau).powi(3) * lev * r * r * (-tau * r * r / (sigma0 * sigma0)).exp())
}

/// IF of the (restricted or unrestricted) MDPDE of σ² in normal regression,
/// direction i₀ with residual `r`: `2(1+τ)^{5/2}/(n(2+τ²))·(r² − σ²)e^{−τr²/(2σ²)} + 2τ(1+τ)σ²/(n(2+τ²))`.
pub fn normal_variance_if(r: f64, sigma: f64, tau: f64, n: usize) -> f64 {
    let s2 = sigma * sigma;
    let den = n as f64 * (2.0 + tau * tau);
    2.0 * (1.0 + tau).powf(2.5) / den * (r * r - s2) * (-tau * r * r / (2.0 * s2)).exp() + 2.0 * tau * (1.0 + tau) * s2 / den
}

/// Values of a scalar influence measure along contamination points
/// `t = m + k·s`, where `m` and `s` are the mean and standard deviation of
/// observation i₀ and `k` runs over the grid. Discrete families round `t` to
/// the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub offsets: Vec<f64>,
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub max: f64,
    pub argmax: f64,
    /// The maximum over the full grid does not exceed the maximum over the
    /// inner half-width grid by more than 0.1%.
    pub bounded_in_t: bool,
}

pub fn scan_grid<F>(
    model: &Model,
    x: &DMatrix<f64>,
    theta: &ParamVector,
    i0: usize,
    half_width: f64,
    points: usize,
    f: F,
) -> Result<GridScan>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if i0 >= x.nrows() {
        return Err(DpdError::Invalid(format!("direction {} outside 1..{}", i0 + 1, x.nrows())));
    }
    if points < 3 || !(half_width > 0.0) {
        return Err(DpdError::Invalid("grid needs >= 3 points and a positive width".into()));
    }
    let m = model.mean(x, i0, theta);
    let s = match model.family {
        Family::NormalLinear => model.sigma(theta),
        Family::PoissonLog => m.sqrt(),
        Family::BernoulliLogit => (m * (1.0 - m)).sqrt(),
    };
    let offsets: Vec<f64> = (0..points)
        .map(|j| -half_width + 2.0 * half_width * j as f64 / (points - 1) as f64)
        .collect();
    let ts: Vec<f64> = offsets
        .iter()
        .map(|k| {
            let t = m + k * s;
            match model.family {
                Family::NormalLinear => t,
                Family::PoissonLog => t.round().max(0.0),
                Family::BernoulliLogit => t.round().clamp(0.0, 1.0),
            }
        })
        .collect();
    let values = ts.par_iter().map(|&t| f(t)).collect::<Result<Vec<f64>>>()?;
    let (mut max, mut argmax, mut inner) = (f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY);
    for (k, v) in offsets.iter().zip(&values) {
        if *v > max {
            max = *v;
            argmax = *k;
        }
        if k.abs() <= half_width / 2.0 {
            inner = inner.max(*v);
        }
    }
    Ok(GridScan {
        bounded_in_t: max <= inner * (1.0 + 1e-3) + 1e-300,
        offsets,
        points: ts,
        values,
        max,
        argmax,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerInfluence {
    /// `IFᵀK` with K the gradient of the power in the mean shift; simple nulls only.
    pub pif: Option<f64>,
    pub lif: Option<f64>,
    /// One-sided ε-derivatives of the contaminated power and level.
    pub pif_eps: f64,
    pub lif_eps: f64,
    /// False when the two routes disagree by more than 1e-3.
    pub stable: bool,
}

/// Power and level influence functions at local alternative Δ.
pub fn pif_lif(
    model: &Model,
    x: &DMatrix<f64>,
    hypothesis: &Hypothesis,
    base: Option<&ParamVector>,
    delta: &DVector<f64>,
    spec: &ContaminationSpec,
    tuning: &Tuning,
) -> Result<PowerInfluence> {
    spec.validate(x.nrows())?;
    let series = SeriesControl {
        max_terms: 100_000,
        target_error: 1e-12,
    };
    let lp = LocalPower::new(model, x, hypothesis, base, tuning)?.with_series(series);
    let dir = lp.contamination_shift_at(&spec.pairs())?;
    let mu = lp.mean_shift(delta)?;
    let zero = DVector::zeros(mu.len());
    let pif_eps = eps_derivative(&lp, &mu, &dir)?;
    let lif_eps = eps_derivative(&lp, &zero, &dir)?;
    let (pif, lif) = match hypothesis {
        Hypothesis::Simple { .. } => (
            Some(dir.dot(&lp.power_gradient(&mu)?)),
            Some(dir.dot(&lp.power_gradient(&zero)?)),
        ),
        Hypothesis::Composite { .. } => (None, None),
    };
    let agree = |k: Option<f64>, e: f64| k.map_or(true, |k| (k - e).abs() <= 1e-3 * k.abs().max(1.0));
    Ok(PowerInfluence {
        stable: agree(pif, pif_eps) && agree(lif, lif_eps),
        pif,
        lif,
        pif_eps,
        lif_eps,
    })
}

/// `d/dε P(ε)` at 0 by the one-sided rule `(−3P(0) + 4P(h) − P(2h))/(2h)`.
fn eps_derivative(lp: &LocalPower, mu: &DVector<f64>, dir: &DVector<f64>) -> Result<f64> {
    let scale = dir.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sd = lp.w_covariance().diagonal().iter().fold(0.0_f64, |a, v| a.max(v.max(0.0).sqrt()));
    let h = 1e-4 * sd.max(mu.amax()) / scale;
    let p = |e: f64| -> Result<f64> { Ok(lp.tail_at_mean(&(mu + dir * e))?.prob) };
    Ok((-3.0 * p(0.0)? + 4.0 * p(h)? - p(2.0 * h)?) / (2.0 * h))
}
