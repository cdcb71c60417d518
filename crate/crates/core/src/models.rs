//! Independent non-homogeneous observation models.
//!
//! Observation `i` has density `fᵢ(·;θ)` depending on the design row `xᵢ`
//! through the linear predictor `ηᵢ = xᵢ'β`. Three families are provided:
//! normal linear regression (scale σ free or known), Poisson with log link and
//! Bernoulli with logit link.
//!
//! For every family the score has the form `u = (xᵢ·r(y), s(y))` with scalar
//! `r` and, for the normal family with free scale, a scale score `s`. All
//! integrals therefore reduce to one-dimensional integrals of products of
//! powers of densities. For the normal family the product of density powers is
//! an unnormalised Gaussian and the remaining polynomial factor (degree ≤ 4)
//! is integrated exactly with a 5-node Gauss–Hermite rule. Discrete families
//! are summed over a support truncated by a Chernoff bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{DpdError, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    NormalLinear,
    PoissonLog,
    BernoulliLogit,
}

/// Role of the scale parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleRole {
    /// σ is estimated and is the last component of θ.
    Free,
    /// σ is known and excluded from θ.
    Fixed(f64),
    /// No scale parameter (φ = 1).
    Absent,
}

/// A model family together with the role of its scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub family: Family,
    pub scale: ScaleRole,
}

/// Regression coefficients plus optional scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: DVector<f64>,
    pub scale: Option<f64>,
}

impl ParamVector {
    pub fn new(beta: DVector<f64>, scale: Option<f64>) -> Self {
        Self { beta, scale }
    }

    pub fn from_slice(beta: &[f64], scale: Option<f64>) -> Self {
        Self::new(DVector::from_column_slice(beta), scale)
    }
}

/// Fixed design and observed responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(DpdError::Invalid(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < x.ncols() {
            return Err(DpdError::Invalid(format!(
                "n = {} observations is less than p = {} columns",
                x.nrows(),
                x.ncols()
            )));
        }
        if let Some((k, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (k % x.nrows(), k / x.nrows());
            return Err(DpdError::Invalid(format!(
                "non-finite design entry at row {}, column {}",
                r + 1,
                c + 1
            )));
        }
        if let Some((i, _)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DpdError::Invalid(format!("non-finite response at row {}", i + 1)));
        }
        Ok(Self { x, y })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Copy without the given zero-based rows.
    pub fn drop_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(DpdError::Invalid(format!("row {} out of range", r + 1)));
        }
        let keep: Vec<usize> = (0..self.n()).filter(|i| !rows.contains(i)).collect();
        let x = self.x.select_rows(keep.iter());
        let y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.y[i]));
        Self::new(x, y)
    }
}

/// Per-observation density at one parameter value.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Obs {
    family: Family,
    /// Mean of the response.
    pub(crate) mean: f64,
    eta: f64,
    pub(crate) sigma: f64,
    scale_free: bool,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Obs {
    fn log_pdf_with(&self, y: f64, ln_fact: f64) -> f64 {
        match self.family {
            Family::NormalLinear => {
                let z = (y - self.mean) / self.sigma;
                -0.5 * z * z - self.sigma.ln() - 0.5 * LN_2PI
            }
            Family::PoissonLog => y * self.eta - self.mean - ln_fact,
            Family::BernoulliLogit => {
                if y > 0.5 {
                    -softplus(-self.eta)
                } else {
                    -softplus(self.eta)
                }
            }
        }
    }

    pub(crate) fn log_pdf(&self, y: f64) -> f64 {
        let ln_fact = match self.family {
            Family::PoissonLog => ln_gamma(y + 1.0),
            _ => 0.0,
        };
        self.log_pdf_with(y, ln_fact)
    }

    /// Multiplier of `xᵢ` in the β-block of the score.
    pub(crate) fn r(&self, y: f64) -> f64 {
        match self.family {
            Family::NormalLinear => (y - self.mean) / (self.sigma * self.sigma),
            _ => y - self.mean,
        }
    }

    /// Scale component of the score (zero when σ is not a parameter).
    pub(crate) fn s(&self, y: f64) -> f64 {
        if self.scale_free {
            let e = y - self.mean;
            (e * e - self.sigma * self.sigma) / self.sigma.powi(3)
        } else {
            0.0
        }
    }

    fn check_y(&self, y: f64) -> Result<()> {
        let ok = match self.family {
            Family::NormalLinear => y.is_finite(),
            Family::PoissonLog => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            Family::BernoulliLogit => y == 0.0 || y == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DpdError::Domain(format!(
                "response {y} is outside the support of the {:?} family",
                self.family
            )))
        }
    }
}

/// Gauss–Hermite nodes and weights (physicists' convention, 5 points).
const GH_NODES: [f64; 5] = [
    -2.020_182_870_456_085_6,
    -0.958_572_464_613_818_5,
    0.0,
    0.958_572_464_613_818_5,
    2.020_182_870_456_085_6,
];
const GH_WEIGHTS: [f64; 5] = [
    0.019_953_242_059_045_913,
    0.393_619_323_152_241_16,
    0.945_308_720_482_941_9,
    0.393_619_323_152_241_16,
    0.019_953_242_059_045_913,
];
const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Log Chernoff bound for a Poisson(μ) tail at k (upper if k > μ, lower if k < μ).
fn poisson_chernoff(mu: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return -mu;
    }
    -mu + k * (1.0 + mu.ln() - k.ln())
}

/// `∫ Πₖ fₖ(y)^{aₖ} g(y) dy` over the common support.
///
/// Every factor with positive power must belong to the same family. At least
/// one power must be ≥ 1 for discrete families (it bounds the summand).
pub(crate) fn integrate<const N: usize, G>(factors: &[(Obs, f64)], g: G) -> Result<[f64; N]>
where
    G: Fn(f64) -> [f64; N],
{
    let mut out = [0.0; N];
    let family = factors[0].0.family;
    match family {
        Family::NormalLinear => {
            let mut prec = 0.0;
            let mut lin = 0.0;
            let mut log_norm = 0.0;
            for (o, a) in factors {
                let s2 = o.sigma * o.sigma;
                prec += a / s2;
                lin += a * o.mean / s2;
                log_norm += -a * (o.sigma.ln() + 0.5 * LN_2PI);
            }
            if !(prec > 0.0) {
                return Err(DpdError::Domain("integrand is not integrable".into()));
            }
            let m = lin / prec;
            let quad: f64 = factors
                .iter()
                .map(|(o, a)| a * (o.mean - m).powi(2) / (o.sigma * o.sigma))
                .sum();
            let log_mass = log_norm + 0.5 * (LN_2PI - prec.ln()) - 0.5 * quad;
            let mass = log_mass.exp();
            let sd = (2.0 / prec).sqrt();
            for (node, w) in GH_NODES.iter().zip(GH_WEIGHTS) {
                let v = g(m + sd * node);
                for k in 0..N {
                    out[k] += w * v[k];
                }
            }
            for o in out.iter_mut() {
                *o *= mass / SQRT_PI;
            }
        }
        Family::BernoulliLogit => {
            for y in [0.0, 1.0] {
                let lw: f64 = factors.iter().map(|(o, a)| a * o.log_pdf_with(y, 0.0)).sum();
                let w = lw.exp();
                let v = g(y);
                for k in 0..N {
                    out[k] += w * v[k];
                }
            }
        }
        Family::PoissonLog => {
            let (dom, _) = factors
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one factor");
            let mu = dom.mean;
            if !(mu.is_finite() && mu < 1e8) {
                return Err(DpdError::Truncation(format!("Poisson mean {mu} too large")));
            }
            let ln_eps = (1e-15_f64).ln();
            let poly = |k: f64| 5.0 * (k + 2.0).ln();
            let mut hi = mu.ceil() + 1.0;
            while poisson_chernoff(mu, hi) + poly(hi) > ln_eps {
                hi += 1.0 + (hi.sqrt() * 0.05).floor();
            }
            let mut lo = 0.0;
            if mu > 30.0 {
                let mut k = mu.floor() - 1.0;
                while k > 0.0 && poisson_chernoff(mu, k) + poly(mu) > ln_eps {
                    k -= 1.0 + (k.sqrt() * 0.05).floor();
                }
                lo = k.max(0.0).floor();
            }
            let mut ln_fact = ln_gamma(lo + 1.0);
            let mut y = lo;
            while y <= hi {
                let lw: f64 = factors
                    .iter()
                    .map(|(o, a)| a * o.log_pdf_with(y, ln_fact))
                    .sum();
                let w = lw.exp();
                if w > 0.0 {
                    let v = g(y);
                    for k in 0..N {
                        out[k] += w * v[k];
                    }
                }
                y += 1.0;
                ln_fact += y.ln();
            }
        }
    }
    Ok(out)
}

/// Numerical summaries of a design matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    pub rank_deficient: bool,
    /// Smallest eigenvalue of X'X/n.
    pub min_eigenvalue: f64,
    /// n · maxᵢ xᵢ'(X'X)⁻¹xᵢ.
    pub max_leverage: f64,
    pub max_abs_entry: f64,
    pub condition_number: f64,
}

impl DesignDiagnostics {
    pub fn require_full_rank(&self) -> Result<()> {
        if self.rank_deficient {
            Err(DpdError::SingularDesign {
                rank: self.rank,
                p: self.p,
            })
        } else {
            Ok(())
        }
    }
}

pub fn design_diagnostics(x: &DMatrix<f64>) -> DesignDiagnostics {
    let n = x.nrows();
    let p = x.ncols();
    let rank = linalg::numerical_rank(x, 1e-10);
    let xtx = x.transpose() * x / n as f64;
    let (vals, _) = linalg::sym_eigen(&xtx);
    let min_eigenvalue = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = vals.iter().cloned().fold(0.0, f64::max);
    let pinv = (x.transpose() * x)
        .pseudo_inverse(1e-12 * max_eig * n as f64)
        .unwrap_or_else(|_| DMatrix::zeros(p, p));
    let max_leverage = (0..n)
        .map(|i| {
            let xi = x.row(i).transpose();
            (xi.transpose() * &pinv * &xi)[(0, 0)]
        })
        .fold(0.0, f64::max)
        * n as f64;
    DesignDiagnostics {
        n,
        p,
        rank,
        rank_deficient: rank < p,
        min_eigenvalue,
        max_leverage,
        max_abs_entry: x.amax(),
        condition_number: if min_eigenvalue > 0.0 {
            max_eig / min_eigenvalue
        } else {
            f64::INFINITY
        },
    }
}

impl Model {
    pub fn normal() -> Self {
        Self {
            family: Family::NormalLinear,
            scale: ScaleRole::Free,
        }
    }

    pub fn normal_known_scale(sigma: f64) -> Self {
        Self {
            family: Family::NormalLinear,
            scale: ScaleRole::Fixed(sigma),
        }
    }

    pub fn poisson() -> Self {
        Self {
            family: Family::PoissonLog,
            scale: ScaleRole::Absent,
        }
    }

    pub fn bernoulli() -> Self {
        Self {
            family: Family::BernoulliLogit,
            scale: ScaleRole::Absent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.family, self.scale) {
            (Family::NormalLinear, ScaleRole::Free) => Ok(()),
            (Family::NormalLinear, ScaleRole::Fixed(s)) if s > 0.0 && s.is_finite() => Ok(()),
            (Family::NormalLinear, s) => Err(DpdError::Invalid(format!(
                "normal model needs a free or positive fixed scale, got {s:?}"
            ))),
            (_, ScaleRole::Absent) => Ok(()),
            (f, s) => Err(DpdError::Invalid(format!("{f:?} has no scale parameter, got {s:?}"))),
        }
    }

    pub fn scale_is_free(&self) -> bool {
        matches!(self.scale, ScaleRole::Free)
    }

    /// Length of θ for a design with `p` columns.
    pub fn dim(&self, p: usize) -> usize {
        p + usize::from(self.scale_is_free())
    }

    /// The same family with σ fixed at `sigma` (normal) or unchanged otherwise.
    pub fn with_fixed_scale(&self, sigma: f64) -> Self {
        match self.family {
            Family::NormalLinear => Self::normal_known_scale(sigma),
            _ => *self,
        }
    }

    pub fn validate_param(&self, theta: &ParamVector, p: usize) -> Result<()> {
        if theta.beta.len() != p {
            return Err(DpdError::Invalid(format!(
                "β has {} entries, design has {p} columns",
                theta.beta.len()
            )));
        }
        if theta.beta.iter().any(|b| !b.is_finite()) {
            return Err(DpdError::Domain("non-finite β".into()));
        }
        if self.scale_is_free() {
            match theta.scale {
                Some(s) if s > 0.0 && s.is_finite() => {}
                other => {
                    return Err(DpdError::Domain(format!("scale must be positive, got {other:?}")))
                }
            }
        }
        Ok(())
    }

    /// σ used for observation densities (1 for families without scale).
    pub fn sigma(&self, theta: &ParamVector) -> f64 {
        match self.scale {
            ScaleRole::Free => theta.scale.unwrap_or(f64::NAN),
            ScaleRole::Fixed(s) => s,
            ScaleRole::Absent => 1.0,
        }
    }

    /// θ as a flat vector `(β, σ)` or `β`.
    pub fn flatten(&self, theta: &ParamVector) -> DVector<f64> {
        if self.scale_is_free() {
            let p = theta.beta.len();
            let mut v = DVector::zeros(p + 1);
            v.rows_mut(0, p).copy_from(&theta.beta);
            v[p] = self.sigma(theta);
            v
        } else {
            theta.beta.clone()
        }
    }

    pub fn unflatten(&self, v: &DVector<f64>, p: usize) -> ParamVector {
        let beta = v.rows(0, p).into_owned();
        let scale = match self.scale {
            ScaleRole::Free => Some(v[p]),
            ScaleRole::Fixed(s) => Some(s),
            ScaleRole::Absent => None,
        };
        ParamVector { beta, scale }
    }

    pub(crate) fn obs(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector) -> Obs {
        let eta = x.row(i).dot(&theta.beta.transpose());
        let mean = match self.family {
            Family::NormalLinear => eta,
            Family::PoissonLog => eta.exp(),
            Family::BernoulliLogit => 1.0 / (1.0 + (-eta).exp()),
        };
        Obs {
            family: self.family,
            mean,
            eta,
            sigma: self.sigma(theta),
            scale_free: self.scale_is_free(),
        }
    }

    /// Mean of observation `i`.
    pub fn mean(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector) -> f64 {
        self.obs(x, i, theta).mean
    }

    /// Vector `(xᵢ·er, es)` of length `dim`.
    pub(crate) fn embed_vec(&self, x: &DMatrix<f64>, i: usize, er: f64, es: f64) -> DVector<f64> {
        let p = x.ncols();
        let mut v = DVector::zeros(self.dim(p));
        for j in 0..p {
            v[j] = x[(i, j)] * er;
        }
        if self.scale_is_free() {
            v[p] = es;
        }
        v
    }

    /// Matrix with blocks `xxᵀ·rr`, `x·rs`, `xᵀ·sr`, `ss` (row factor first).
    pub(crate) fn embed_mat(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        rr: f64,
        rs: f64,
        sr: f64,
        ss: f64,
    ) -> DMatrix<f64> {
        let p = x.ncols();
        let d = self.dim(p);
        let mut m = DMatrix::zeros(d, d);
        for a in 0..p {
            let xa = x[(i, a)];
            for b in 0..p {
                m[(a, b)] = xa * x[(i, b)] * rr;
            }
        }
        if self.scale_is_free() {
            for a in 0..p {
                m[(a, p)] = x[(i, a)] * rs;
                m[(p, a)] = x[(i, a)] * sr;
            }
            m[(p, p)] = ss;
        }
        m
    }

    /// `log fᵢ(y;θ)`.
    pub fn log_density(&self, x: &DMatrix<f64>, i: usize, y: f64, theta: &ParamVector) -> Result<f64> {
        let o = self.obs(x, i, theta);
        o.check_y(y)?;
        Ok(o.log_pdf(y))
    }

    /// `uᵢ(y;θ) = ∇_θ log fᵢ(y;θ)`.
    pub fn score(&self, x: &DMatrix<f64>, i: usize, y: f64, theta: &ParamVector) -> Result<DVector<f64>> {
        let o = self.obs(x, i, theta);
        o.check_y(y)?;
        Ok(self.embed_vec(x, i, o.r(y), o.s(y)))
    }

    /// `∫ fᵢ^{1+a}`.
    pub fn power_integral(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector, a: f64) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(DpdError::Domain(format!("power a = {a}")));
        }
        let o = self.obs(x, i, theta);
        if self.family == Family::NormalLinear {
            return Ok(normal_power_integral(o.sigma, a));
        }
        Ok(integrate(&[(o, 1.0 + a)], |_| [1.0])?[0])
    }

    /// `ξᵢ = ∫ uᵢ fᵢ^{1+τ}`.
    pub fn xi_vector(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector, tau: f64) -> Result<DVector<f64>> {
        let o = self.obs(x, i, theta);
        let [er, es] = self.xi_scalars(&o, tau)?;
        Ok(self.embed_vec(x, i, er, es))
    }

    pub(crate) fn xi_scalars(&self, o: &Obs, tau: f64) -> Result<[f64; 2]> {
        if self.family == Family::NormalLinear {
            let es = if self.scale_is_free() {
                -normal_power_integral(o.sigma, tau) * tau / ((1.0 + tau) * o.sigma)
            } else {
                0.0
            };
            return Ok([0.0, es]);
        }
        integrate(&[(*o, 1.0 + tau)], |y| [o.r(y), o.s(y)])
    }

    /// `J⁽ⁱ⁾ = ∫ uᵢuᵢᵀ fᵢ^{1+τ}`.
    pub fn j_matrix(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector, tau: f64) -> Result<DMatrix<f64>> {
        if !(tau >= 0.0) {
            return Err(DpdError::Domain(format!("tuning parameter {tau}")));
        }
        let o = self.obs(x, i, theta);
        let [rr, rs, ss] = integrate(&[(o, 1.0 + tau)], |y| {
            let (r, s) = (o.r(y), o.s(y));
            [r * r, r * s, s * s]
        })?;
        Ok(self.embed_mat(x, i, rr, rs, rs, ss))
    }

    /// `A_γ⁽ⁱ⁾ = ∇²_θ d_γ(fᵢ(θ), fᵢ(θ₀))` at `θ = θ₀`, equal to `(1+γ) J⁽ⁱ⁾(γ)`.
    pub fn a_matrix(&self, x: &DMatrix<f64>, i: usize, theta: &ParamVector, gamma: f64) -> Result<DMatrix<f64>> {
        Ok(self.j_matrix(x, i, theta, gamma)? * (1.0 + gamma))
    }

    /// Density power divergence `d_γ(fᵢ(·;θ₁), fᵢ(·;θ₂))`; Kullback–Leibler at γ = 0.
    pub fn dpd_divergence(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        theta1: &ParamVector,
        theta2: &ParamVector,
        gamma: f64,
    ) -> Result<f64> {
        if !(gamma >= 0.0) {
            return Err(DpdError::Domain(format!("tuning parameter {gamma}")));
        }
        let o1 = self.obs(x, i, theta1);
        let o2 = self.obs(x, i, theta2);
        if o1.mean == o2.mean && o1.sigma == o2.sigma {
            return Ok(0.0);
        }
        let d = if gamma == 0.0 {
            integrate(&[(o1, 1.0)], |y| [o1.log_pdf(y) - o2.log_pdf(y)])?[0]
        } else {
            let p2 = self.obs_power_integral(&o2, gamma)?;
            let p1 = self.obs_power_integral(&o1, gamma)?;
            let cross = integrate(&[(o2, gamma), (o1, 1.0)], |_| [1.0])?[0];
            p2 - (1.0 + 1.0 / gamma) * cross + p1 / gamma
        };
        Ok(d.max(0.0))
    }

    fn obs_power_integral(&self, o: &Obs, a: f64) -> Result<f64> {
        if self.family == Family::NormalLinear {
            Ok(normal_power_integral(o.sigma, a))
        } else {
            Ok(integrate(&[(*o, 1.0 + a)], |_| [1.0])?[0])
        }
    }

    /// Gradients of `d_γ(fᵢ(θ₁), fᵢ(θ₂))` with respect to θ₁ and θ₂.
    pub fn divergence_gradients(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        theta1: &ParamVector,
        theta2: &ParamVector,
        gamma: f64,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let o1 = self.obs(x, i, theta1);
        let o2 = self.obs(x, i, theta2);
        if gamma == 0.0 {
            let [r1, s1, r2, s2] = integrate(&[(o1, 1.0)], |y| {
                let l = o1.log_pdf(y) - o2.log_pdf(y);
                [o1.r(y) * l, o1.s(y) * l, -o2.r(y), -o2.s(y)]
            })?;
            return Ok((self.embed_vec(x, i, r1, s1), self.embed_vec(x, i, r2, s2)));
        }
        let [a_r1, a_s1] = self.xi_scalars(&o1, gamma)?;
        let [b_r2, b_s2] = self.xi_scalars(&o2, gamma)?;
        let [c_r1, c_s1, c_r2, c_s2] = integrate(&[(o2, gamma), (o1, 1.0)], |y| {
            [o1.r(y), o1.s(y), o2.r(y), o2.s(y)]
        })?;
        let k1 = (1.0 + gamma) / gamma;
        let k2 = 1.0 + gamma;
        Ok((
            self.embed_vec(x, i, k1 * (a_r1 - c_r1), k1 * (a_s1 - c_s1)),
            self.embed_vec(x, i, k2 * (b_r2 - c_r2), k2 * (b_s2 - c_s2)),
        ))
    }

    /// `∫ Dᵢ(y;θ₁) Dᵢ(y;θ₂)ᵀ fᵢ(y;θ₁) dy` where `Dᵢ(y;θ) = fᵢ(y;θ)^τ uᵢ(y;θ) − ξᵢ`,
    /// i.e. the covariance under `fᵢ(·;θ₁)` of the two weighted scores.
    pub fn weighted_score_covariance(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        theta1: &ParamVector,
        theta2: &ParamVector,
        tau: f64,
    ) -> Result<DMatrix<f64>> {
        let o1 = self.obs(x, i, theta1);
        let o2 = self.obs(x, i, theta2);
        let [rr, rs, sr, ss] = integrate(&[(o1, 1.0 + tau), (o2, tau)], |y| {
            let (r1, s1, r2, s2) = (o1.r(y), o1.s(y), o2.r(y), o2.s(y));
            [r1 * r2, r1 * s2, s1 * r2, s1 * s2]
        })?;
        let [m_r, m_s] = integrate(&[(o1, 1.0), (o2, tau)], |y| [o2.r(y), o2.s(y)])?;
        let xi1 = self.xi_vector(x, i, theta1, tau)?;
        let m2 = self.embed_vec(x, i, m_r, m_s);
        Ok(self.embed_mat(x, i, rr, rs, sr, ss) - xi1 * m2.transpose())
    }

    /// `Dᵢ(t;θ) = fᵢ(t;θ)^τ uᵢ(t;θ) − ξᵢ(θ)`.
    pub fn weighted_score(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        t: f64,
        theta: &ParamVector,
        tau: f64,
    ) -> Result<DVector<f64>> {
        let o = self.obs(x, i, theta);
        o.check_y(t)?;
        let w = (tau * o.log_pdf(t)).exp();
        let [er, es] = self.xi_scalars(&o, tau)?;
        Ok(self.embed_vec(x, i, w * o.r(t) - er, w * o.s(t) - es))
    }

    /// Contribution of observation `i` to the objective `Hₙ` (before the
    /// 1/n average), adding its gradient into `grad`.
    pub(crate) fn objective_term(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        y: f64,
        theta: &ParamVector,
        tau: f64,
        grad: &mut DVector<f64>,
    ) -> Result<f64> {
        let o = self.obs(x, i, theta);
        let p = x.ncols();
        let lf = o.log_pdf(y);
        let (r, s) = (o.r(y), o.s(y));
        let (value, gr, gs) = if tau == 0.0 {
            (-lf, -r, -s)
        } else {
            let ft = (tau * lf).exp();
            let pi = self.obs_power_integral(&o, tau)?;
            let [xr, xs] = self.xi_scalars(&o, tau)?;
            (
                pi - (1.0 + 1.0 / tau) * ft,
                (1.0 + tau) * (xr - ft * r),
                (1.0 + tau) * (xs - ft * s),
            )
        };
        for j in 0..p {
            grad[j] += x[(i, j)] * gr;
        }
        if self.scale_is_free() {
            grad[p] += gs;
        }
        Ok(value)
    }

    /// Checks that every response lies in the family's support.
    pub fn check_responses(&self, data: &Dataset) -> Result<()> {
        for (i, &y) in data.response().iter().enumerate() {
            let o = Obs {
                family: self.family,
                mean: 0.0,
                eta: 0.0,
                sigma: 1.0,
                scale_free: false,
            };
            o.check_y(y)
                .map_err(|e| DpdError::Domain(format!("row {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

/// `∫ φ_σ^{1+a} = (√(2π)σ)^{−a}(1+a)^{−1/2}`.
pub fn normal_power_integral(sigma: f64, a: f64) -> f64 {
    ((2.0 * std::f64::consts::PI).sqrt() * sigma).powf(-a) / (1.0 + a).sqrt()
}

/// `ζ_τ = (2π)^{−τ/2}σ^{−(τ+2)}(1+τ)^{−3/2}`, so that the β-block of `J⁽ⁱ⁾` is `ζ_τ xᵢxᵢ'`.
pub fn normal_zeta(tau: f64, sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI).powf(-tau / 2.0) * sigma.powf(-(tau + 2.0)) * (1.0 + tau).powf(-1.5)
}

/// `υ_τ^β = σ²(1 + τ²/(1+2τ))^{3/2}`, the β-variance inflation of the MDPDE.
pub fn normal_beta_variance(tau: f64, sigma: f64) -> f64 {
    sigma * sigma * (1.0 + tau * tau / (1.0 + 2.0 * tau)).powf(1.5)
}

/// `ζ₁^{γ,τ} = (√(2π)σ)^{−γ}(1+γ)^{−1/2}(1 + τ²/(1+2τ))^{3/2}`, the common
/// eigenvalue weight of the normal-regression test statistics.
pub fn normal_null_weight(gamma: f64, tau: f64, sigma: f64) -> f64 {
    ((2.0 * std::f64::consts::PI).sqrt() * sigma).powf(-gamma)
        * (1.0 + gamma).powf(-0.5)
        * (1.0 + tau * tau / (1.0 + 2.0 * tau)).powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    /// ∫ over the real line of a function concentrated near `c` with width `w`.
    fn quad_line<F: Fn(f64) -> f64>(f: F, c: f64, w: f64) -> f64 {
        let mut s = 0.0;
        for k in -40..40 {
            let a = c + k as f64 * w;
            s += adaptive_simpson(&f, a, a + w, 1e-15);
        }
        s
    }

    fn normal_pdf(y: f64, m: f64, s: f64) -> f64 {
        (-(y - m).powi(2) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
    }

    fn design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) })
    }

    #[test]
    fn log_density_reference_values() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let th = ParamVector::from_slice(&[0.3, -0.2], Some(1.7));
        let m = Model::normal();
        let mu = 0.3 - 0.1;
        let ld = m.log_density(&x, 0, mu, &th).unwrap();
        assert!((ld + ((2.0 * std::f64::consts::PI).sqrt() * 1.7).ln()).abs() < 1e-14);
        let pm = Model::poisson();
        let lp = pm.log_density(&x, 0, 0.0, &th).unwrap();
        assert!((lp + mu.exp()).abs() < 1e-14);
        let b = Model::bernoulli();
        let zero = ParamVector::from_slice(&[0.0, 0.0], None);
        assert!((b.log_density(&x, 0, 1.0, &zero).unwrap() - 0.5_f64.ln()).abs() < 1e-15);
        assert!(pm.log_density(&x, 0, 1.5, &th).is_err());
        assert!(b.log_density(&x, 0, 2.0, &th).is_err());
    }

    #[test]
    fn score_matches_finite_differences() {
        let x = design(5, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for model in [Model::normal(), Model::poisson(), Model::bernoulli()] {
            for i in 0..5 {
                let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
                let th = ParamVector::from_slice(&beta, Some(rng.random_range(0.5..2.0)));
                let y = match model.family {
                    Family::NormalLinear => rng.random_range(-2.0..2.0),
                    Family::PoissonLog => 3.0,
                    Family::BernoulliLogit => 1.0,
                };
                let u = model.score(&x, i, y, &th).unwrap();
                let flat = model.flatten(&th);
                for k in 0..flat.len() {
                    let h = 1e-6;
                    let mut a = flat.clone();
                    let mut b = flat.clone();
                    a[k] += h;
                    b[k] -= h;
                    let fd = (model.log_density(&x, i, y, &model.unflatten(&a, 3)).unwrap()
                        - model.log_density(&x, i, y, &model.unflatten(&b, 3)).unwrap())
                        / (2.0 * h);
                    assert!((fd - u[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "{model:?} k={k}");
                }
            }
        }
    }

    #[test]
    fn score_vanishes_at_the_mean() {
        let x = design(3, 2, 4);
        let th = ParamVector::from_slice(&[0.2, 0.1], Some(1.3));
        let m = Model::normal();
        let mu = m.mean(&x, 1, &th);
        let u = m.score(&x, 1, mu, &th).unwrap();
        assert!(u.rows(0, 2).norm() == 0.0);
        for r in [-1.3, 1.3] {
            assert!(m.score(&x, 1, mu + r, &th).unwrap()[2].abs() < 1e-15);
        }
        // Poisson and Bernoulli score β-blocks vanish when y equals the mean.
        let b = Model::bernoulli();
        let zero = ParamVector::from_slice(&[0.0, 0.0], None);
        let o = b.obs(&x, 0, &zero);
        assert_eq!(o.r(0.5), 0.0);
        let p = Model::poisson();
        let o = p.obs(&x, 0, &zero);
        assert_eq!(o.r(1.0), 0.0);
    }

    #[test]
    fn power_integral_reference_values() {
        let x = design(4, 2, 5);
        let th = ParamVector::from_slice(&[0.4, 0.3], Some(1.0));
        for m in [Model::normal(), Model::poisson(), Model::bernoulli()] {
            for i in 0..4 {
                assert!((m.power_integral(&x, i, &th, 0.0).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        let v = Model::normal().power_integral(&x, 0, &th, 1.0).unwrap();
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-10);
        // Poisson by brute force summation far into the tail.
        let pm = Model::poisson();
        for i in 0..4 {
            let mu = pm.mean(&x, i, &th);
            let mut brute = 0.0;
            let mut lf = -mu;
            for y in 0..400 {
                if y > 0 {
                    lf += mu.ln() - (y as f64).ln();
                }
                brute += (1.5 * lf).exp();
            }
            assert!((pm.power_integral(&x, i, &th, 0.5).unwrap() - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn xi_reference_values() {
        let x = design(3, 2, 6);
        let th = ParamVector::from_slice(&[0.4, 0.8], Some(1.2));
        let n = Model::normal();
        for tau in [0.0, 0.3, 1.0] {
            let xi = n.xi_vector(&x, 1, &th, tau).unwrap();
            assert!(xi.rows(0, 2).norm() < 1e-15);
            let mu = n.mean(&x, 1, &th);
            let s = 1.2_f64;
            let oracle = quad_line(
                |y| normal_pdf(y, mu, s).powf(1.0 + tau) * ((y - mu).powi(2) - s * s) / s.powi(3),
                mu,
                0.3,
            );
            assert!((xi[2] - oracle).abs() < 1e-10, "tau={tau}");
        }
        for m in [Model::poisson(), Model::bernoulli()] {
            let xi0 = m.xi_vector(&x, 2, &th, 0.0).unwrap();
            assert!(xi0.norm() < 1e-12);
        }
        let pm = Model::poisson();
        let mu = pm.mean(&x, 2, &th);
        let mut brute = 0.0;
        let mut lf = -mu;
        for y in 0..400 {
            if y > 0 {
                lf += mu.ln() - (y as f64).ln();
            }
            brute += (2.0 * lf).exp() * (y as f64 - mu);
        }
        let xi = pm.xi_vector(&x, 2, &th, 1.0).unwrap();
        for j in 0..2 {
            assert!((xi[j] - x[(2, j)] * brute).abs() < 1e-10);
        }
    }

    #[test]
    fn normal_j_matrix_matches_closed_form_and_quadrature() {
        let x = design(3, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = Model::normal();
        for _ in 0..5 {
            let s: f64 = rng.random_range(0.4..2.5);
            let tau = rng.random_range(0.0..1.2);
            let th = ParamVector::from_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], Some(s));
            let j = n.j_matrix(&x, 0, &th, tau).unwrap();
            let z = normal_zeta(tau, s);
            for a in 0..2 {
                for b in 0..2 {
                    assert!((j[(a, b)] - z * x[(0, a)] * x[(0, b)]).abs() < 1e-10);
                }
                assert!(j[(a, 2)].abs() < 1e-12);
            }
            let mu = n.mean(&x, 0, &th);
            let q = quad_line(
                |y| normal_pdf(y, mu, s).powf(1.0 + tau) * (((y - mu).powi(2) - s * s) / s.powi(3)).powi(2),
                mu,
                0.25 * s,
            );
            assert!((j[(2, 2)] - q).abs() < 1e-8 * (1.0 + q.abs()));
            let a = n.a_matrix(&x, 0, &th, tau).unwrap();
            assert_eq!(a, &j * (1.0 + tau));
        }
    }

    #[test]
    fn j_matrix_at_zero_is_fisher_information() {
        let x = design(3, 2, 9);
        let th = ParamVector::from_slice(&[0.3, -0.4], Some(0.8));
        let j = Model::normal().j_matrix(&x, 1, &th, 0.0).unwrap();
        assert!((j[(2, 2)] - 2.0 / 0.64).abs() < 1e-12);
        assert!((j[(0, 0)] - 1.0 / 0.64).abs() < 1e-12);
        let pj = Model::poisson().j_matrix(&x, 1, &th, 0.0).unwrap();
        let mu = Model::poisson().mean(&x, 1, &th);
        assert!((pj[(0, 0)] - mu).abs() < 1e-10);
        let bj = Model::bernoulli().j_matrix(&x, 1, &th, 0.0).unwrap();
        let pr = Model::bernoulli().mean(&x, 1, &th);
        assert!((bj[(0, 0)] - pr * (1.0 - pr)).abs() < 1e-14);
    }

    #[test]
    fn a_matrix_matches_finite_difference_hessian_of_divergence() {
        let x = design(4, 2, 10);
        let th0 = ParamVector::from_slice(&[0.2, 0.5], Some(1.1));
        for m in [Model::normal(), Model::poisson(), Model::bernoulli()] {
            for gamma in [0.0, 0.5, 1.0] {
                let a = m.a_matrix(&x, 3, &th0, gamma).unwrap();
                let base = m.flatten(&th0);
                let d = base.len();
                let f = |v: &DVector<f64>| m.dpd_divergence(&x, 3, &m.unflatten(v, 2), &th0, gamma).unwrap();
                let h = 1e-4;
                for r in 0..d {
                    for c in 0..d {
                        let mut pp = base.clone();
                        let mut pm = base.clone();
                        let mut mp = base.clone();
                        let mut mm = base.clone();
                        pp[r] += h;
                        pp[c] += h;
                        pm[r] += h;
                        pm[c] -= h;
                        mp[r] -= h;
                        mp[c] += h;
                        mm[r] -= h;
                        mm[c] -= h;
                        let fd = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
                        assert!(
                            (fd - a[(r, c)]).abs() <= 1e-5 * (1.0 + a[(r, c)].abs()),
                            "{:?} γ={gamma} ({r},{c}) {fd} vs {}",
                            m.family,
                            a[(r, c)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_reference_values() {
        let x = design(3, 2, 11);
        let n = Model::normal();
        let t1 = ParamVector::from_slice(&[0.1, 0.7], Some(0.9));
        let t2 = ParamVector::from_slice(&[-0.3, 0.2], Some(0.9));
        let diff = x[(1, 0)] * 0.4 + x[(1, 1)] * 0.5;
        let kl = n.dpd_divergence(&x, 1, &t1, &t2, 0.0).unwrap();
        assert!((kl - diff * diff / (2.0 * 0.81)).abs() < 1e-12);
        assert_eq!(n.dpd_divergence(&x, 1, &t1, &t1, 0.7).unwrap(), 0.0);
        let t3 = ParamVector::from_slice(&[-0.3, 0.2], Some(1.4));
        let (m1, m2) = (n.mean(&x, 1, &t1), n.mean(&x, 1, &t3));
        let g = 0.5;
        let oracle = quad_line(
            |y| {
                let (f1, f2) = (normal_pdf(y, m1, 0.9), normal_pdf(y, m2, 1.4));
                f2.powf(1.0 + g) - (1.0 + 1.0 / g) * f2.powf(g) * f1 + f1.powf(1.0 + g) / g
            },
            0.5 * (m1 + m2),
            0.4,
        );
        let d = n.dpd_divergence(&x, 1, &t1, &t3, g).unwrap();
        assert!((d - oracle).abs() < 1e-8, "{d} vs {oracle}");
    }

    #[test]
    fn divergence_gradients_match_finite_differences() {
        let x = design(3, 2, 12);
        let t1 = ParamVector::from_slice(&[0.1, 0.4], Some(0.9));
        let t2 = ParamVector::from_slice(&[-0.2, 0.3], Some(1.2));
        for m in [Model::normal(), Model::poisson(), Model::bernoulli()] {
            for gamma in [0.0, 0.25, 1.0] {
                let (g1, g2) = m.divergence_gradients(&x, 2, &t1, &t2, gamma).unwrap();
                let (b1, b2) = (m.flatten(&t1), m.flatten(&t2));
                for k in 0..b1.len() {
                    let h = 1e-6;
                    let fd = |base: &DVector<f64>, first: bool| {
                        let mut a = base.clone();
                        let mut b = base.clone();
                        a[k] += h;
                        b[k] -= h;
                        let (ta, tb) = (m.unflatten(&a, 2), m.unflatten(&b, 2));
                        let (da, db) = if first {
                            (m.dpd_divergence(&x, 2, &ta, &t2, gamma), m.dpd_divergence(&x, 2, &tb, &t2, gamma))
                        } else {
                            (m.dpd_divergence(&x, 2, &t1, &ta, gamma), m.dpd_divergence(&x, 2, &t1, &tb, gamma))
                        };
                        (da.unwrap() - db.unwrap()) / (2.0 * h)
                    };
                    assert!((fd(&b1, true) - g1[k]).abs() < 1e-6 * (1.0 + g1[k].abs()));
                    assert!((fd(&b2, false) - g2[k]).abs() < 1e-6 * (1.0 + g2[k].abs()));
                }
            }
        }
    }

    #[test]
    fn weighted_score_covariance_matches_quadrature() {
        let x = design(2, 2, 13);
        let n = Model::normal();
        let t1 = ParamVector::from_slice(&[0.1, 0.4], Some(0.9));
        let t2 = ParamVector::from_slice(&[-0.2, 0.3], Some(1.2));
        let tau = 0.4;
        let c = n.weighted_score_covariance(&x, 0, &t1, &t2, tau).unwrap();
        let (m1, m2) = (n.mean(&x, 0, &t1), n.mean(&x, 0, &t2));
        let xi1 = n.xi_vector(&x, 0, &t1, tau).unwrap();
        let xi2 = n.xi_vector(&x, 0, &t2, tau).unwrap();
        // Entry (σ, σ): ∫ (f1^τ s1 − ξ1σ)(f2^τ s2 − ξ2σ) f1.
        let oracle = quad_line(
            |y| {
                let (f1, f2) = (normal_pdf(y, m1, 0.9), normal_pdf(y, m2, 1.2));
                let s1 = ((y - m1).powi(2) - 0.81) / 0.729;
                let s2 = ((y - m2).powi(2) - 1.44) / 1.728;
                (f1.powf(tau) * s1 - xi1[2]) * (f2.powf(tau) * s2 - xi2[2]) * f1
            },
            m1,
            0.3,
        );
        assert!((c[(2, 2)] - oracle).abs() < 1e-8);
    }

    #[test]
    fn diagnostics_reference_cases() {
        let d = design_diagnostics(&DMatrix::identity(3, 3));
        assert!((d.min_eigenvalue - 1.0 / 3.0).abs() < 1e-14);
        assert!((d.max_leverage - 3.0).abs() < 1e-12);
        assert!(!d.rank_deficient);
        let mut x = design(10, 3, 14);
        let col = x.column(1).into_owned();
        x.set_column(2, &col);
        let d = design_diagnostics(&x);
        assert!(d.rank_deficient);
        assert!(d.require_full_rank().is_err());
    }

    #[test]
    fn normal_constants() {
        assert_eq!(normal_null_weight(0.0, 0.0, 2.3), 1.0);
        let z = normal_zeta(0.5, 1.3);
        let direct = (2.0 * std::f64::consts::PI).powf(-0.25) * 1.3_f64.powf(-2.5) * 1.5_f64.powf(-1.5);
        assert!((z - direct).abs() < 1e-15);
        // ζ₁ = (1+γ) ζ_γ υ_τ^β.
        for (g, t, s) in [(0.25, 0.5, 0.7), (1.0, 0.0, 1.9)] {
            let lhs = normal_null_weight(g, t, s);
            let rhs = (1.0 + g) * normal_zeta(g, s) * normal_beta_variance(t, s);
            assert!((lhs - rhs).abs() < 1e-13 * lhs);
        }
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let e = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0])).unwrap_err();
        assert!(e.to_string().contains("row 2"));
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(Dataset::new(x, DVector::from_vec(vec![1.0])).is_err());
    }

    proptest! {
        #[test]
        fn divergence_is_nonnegative_and_depends_on_linear_predictor(
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            s1 in 0.3f64..2.0, s2 in 0.3f64..2.0, gamma in 0.0f64..1.5, shift in -1.0f64..1.0,
        ) {
            let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
            let n = Model::normal();
            let t1 = ParamVector::from_slice(&b[0..2], Some(s1));
            let t2 = ParamVector::from_slice(&b[2..4], Some(s2));
            let d = n.dpd_divergence(&x, 0, &t1, &t2, gamma).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(n.dpd_divergence(&x, 0, &t1, &t1, gamma).unwrap(), 0.0);
            // Moving β₂ orthogonally to xᵢ leaves the divergence unchanged.
            let mut moved = t2.clone();
            moved.beta[0] += shift * 0.5;
            moved.beta[1] -= shift;
            let d2 = n.dpd_divergence(&x, 0, &t1, &moved, gamma).unwrap();
            prop_assert!((d - d2).abs() < 1e-12);
        }

        #[test]
        fn power_integral_decreases_in_power(a in 0.0f64..2.0, da in 0.01f64..1.0, b0 in -1.0f64..1.0) {
            let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
            let th = ParamVector::from_slice(&[b0, 0.3], Some(1.0));
            for m in [Model::poisson(), Model::bernoulli()] {
                let lo = m.power_integral(&x, 0, &th, a).unwrap();
                let hi = m.power_integral(&x, 0, &th, a + da).unwrap();
                prop_assert!(hi <= lo + 1e-15);
            }
        }

        #[test]
        fn j_matrix_is_symmetric_psd(b0 in -1.0f64..1.0, s in 0.3f64..2.0, tau in 0.0f64..1.5) {
            let x = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, -1.2]);
            let th = ParamVector::from_slice(&[b0, 0.3, -0.1], Some(s));
            for m in [Model::normal(), Model::poisson(), Model::bernoulli()] {
                let j = m.j_matrix(&x, 0, &th, tau).unwrap();
                prop_assert!((&j - j.transpose()).amax() < 1e-12);
                let (vals, _) = linalg::sym_eigen(&j);
                prop_assert!(vals.min() > -1e-12 * (1.0 + vals.max()));
            }
        }
    }
}
