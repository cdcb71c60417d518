//! Monte Carlo size/power studies under covariate and error contamination.
//!
//! Replicate `k` draws covariates and responses from
//! `ChaCha8Rng::seed_from_u64(base_seed)` switched to stream `k`, and the
//! contaminated row sets from the same construction seeded with
//! `base_seed ^ ROW_SEED_MASK`. Every dataset depends only on `(base_seed, k)`,
//! replicates can run in any order on any number of threads, and changing the
//! contamination fractions leaves the clean draws untouched.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpdtest::{self, normal_contiguous_power, MethodChoice, TestOptions, Tuning};
use crate::error::{DpdError, Result};
use crate::estimate::{self, FitOptions, MdpdeFit};
use crate::models::{Dataset, Family, Model, ParamVector, ScaleRole};
use crate::restrict::{self, LinearConstraint, RmdpdeFit};

/// Null hypothesis tested in every replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimHypothesis {
    /// `β = β₀`; for the normal family σ is known and equal to the true σ.
    Simple { beta0: Vec<f64> },
    /// `L'β = l₀` with σ unknown; `l` lists the columns of L.
    Composite { l: Vec<Vec<f64>>, l0: Vec<f64> },
}

pub const ROW_SEED_MASK: u64 = 0x9e37_79b9_7f4a_7c15;

fn default_k_x() -> f64 {
    5.0
}

fn default_k_e() -> f64 {
    8.0
}

fn default_alpha() -> f64 {
    0.05
}

/// Whether shifted covariate rows keep the response drawn from their clean covariates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateShift {
    /// Shift after drawing y: the rows become outlying leverage points.
    AfterResponse,
    /// Shift before drawing y: the rows are leverage points that follow the model.
    #[default]
    BeforeResponse,
}

fn default_restarts() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub family: Family,
    pub n: usize,
    /// Prepend a column of ones; `beta` then starts with the intercept.
    pub intercept: bool,
    pub beta: Vec<f64>,
    /// Error standard deviation (normal family only).
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Covariates are iid `N(0, sigma_x²)`.
    pub sigma_x: f64,
    /// Fraction of rows whose covariates are shifted by `k_x·sigma_x`.
    #[serde(default)]
    pub e_x: f64,
    /// Fraction of rows whose errors are shifted by `k_e·σ`.
    #[serde(default)]
    pub e_err: f64,
    #[serde(default = "default_k_x")]
    pub k_x: f64,
    #[serde(default = "default_k_e")]
    pub k_e: f64,
    #[serde(default)]
    pub covariate_shift: CovariateShift,
    pub hypothesis: SimHypothesis,
    /// `(τ, γ)` cells.
    pub grid: Vec<(f64, f64)>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub replicates: usize,
    pub base_seed: u64,
    /// Random restarts per fit.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl Scenario {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DpdError::Invalid(m));
        if self.n == 0 || self.replicates == 0 {
            return bad("n and replicates must be positive".into());
        }
        let p = self.p();
        if p == 0 || (self.intercept && p < 1) {
            return bad("beta must be non-empty".into());
        }
        if self.n <= p + 1 {
            return bad(format!("n = {} too small for p = {p}", self.n));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta must be finite".into());
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad(format!("sigma_x must be positive, got {}", self.sigma_x));
        }
        for (name, e) in [("e_x", self.e_x), ("e_err", self.e_err)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if !(self.k_x.is_finite() && self.k_e.is_finite()) {
            return bad("contamination magnitudes must be finite".into());
        }
        match (self.family, self.sigma) {
            (Family::NormalLinear, Some(s)) if s > 0.0 && s.is_finite() => {}
            (Family::NormalLinear, _) => return bad("normal family needs sigma > 0".into()),
            _ => {}
        }
        if self.grid.is_empty() {
            return bad("tuning grid must be non-empty".into());
        }
        for &(tau, gamma) in &self.grid {
            Tuning::new(tau, gamma, self.alpha)?;
        }
        match &self.hypothesis {
            SimHypothesis::Simple { beta0 } if beta0.len() != p => bad(format!("beta0 has {} entries, need {p}", beta0.len())),
            SimHypothesis::Composite { .. } if self.family != Family::NormalLinear => {
                bad("composite hypotheses are simulated for the normal family only".into())
            }
            SimHypothesis::Composite { l, l0 } => {
                if l.len() != l0.len() || l.iter().any(|c| c.len() != p) {
                    return bad(format!("L must have {} columns of length {p}", l0.len()));
                }
                self.constraint().map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// Model used for fitting: the normal family with a simple null fixes σ.
    pub fn fit_model(&self) -> Model {
        match (self.family, &self.hypothesis) {
            (Family::NormalLinear, SimHypothesis::Simple { .. }) => Model::normal_known_scale(self.sigma.unwrap_or(1.0)),
            (Family::NormalLinear, _) => Model::normal(),
            (Family::PoissonLog, _) => Model::poisson(),
            (Family::BernoulliLogit, _) => Model::bernoulli(),
        }
    }

    fn constraint(&self) -> Result<LinearConstraint> {
        let SimHypothesis::Composite { l, l0 } = &self.hypothesis else {
            return Err(DpdError::Invalid("not a composite hypothesis".into()));
        };
        let p = self.p();
        let lm = DMatrix::from_fn(p, l.len(), |i, j| l[j][i]);
        LinearConstraint::new(lm, DVector::from_column_slice(l0), ScaleRole::Free)
    }

    /// True when the data-generating β satisfies the null.
    pub fn null_is_true(&self) -> bool {
        match &self.hypothesis {
            SimHypothesis::Simple { beta0 } => beta0.iter().zip(&self.beta).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())),
            SimHypothesis::Composite { .. } => match self.constraint() {
                Ok(c) => (c.l.transpose() * DVector::from_column_slice(&self.beta) - &c.l0).amax() <= 1e-10,
                Err(_) => false,
            },
        }
    }

    /// `E[xx']` under the covariate law.
    pub fn sigma_x_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| match (i == j, self.intercept && i == 0) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => self.sigma_x * self.sigma_x,
        })
    }
}

/// Draws replicate `index`: covariates, the covariate shift of `⌈e_x·n⌉`
/// rows, responses at the true θ, then the error shift of `⌈e_err·n⌉` rows.
/// With [`CovariateShift::AfterResponse`] the responses are drawn before the
/// covariate shift. The two row sets are drawn independently, each without
/// replacement.
pub fn generate_dataset(s: &Scenario, index: u64) -> Result<Dataset> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.base_seed);
    rng.set_stream(index);
    let mut rows = ChaCha8Rng::seed_from_u64(s.base_seed ^ ROW_SEED_MASK);
    rows.set_stream(index);
    let (n, p) = (s.n, s.p());
    let mut x = DMatrix::from_fn(n, p, |_, j| {
        if s.intercept && j == 0 {
            1.0
        } else {
            s.sigma_x * rng.sample::<f64, _>(StandardNormal)
        }
    });
    let nx = (s.e_x * n as f64).ceil() as usize;
    let shifted = sample(&mut rows, n, nx.min(n)).into_vec();
    let first = usize::from(s.intercept);
    let shift = |x: &mut DMatrix<f64>| {
        for &i in &shifted {
            for j in first..p {
                x[(i, j)] += s.k_x * s.sigma_x;
            }
        }
    };
    if s.covariate_shift == CovariateShift::BeforeResponse {
        shift(&mut x);
    }
    let beta = DVector::from_column_slice(&s.beta);
    let eta = &x * &beta;
    let mut y = DVector::zeros(n);
    let sigma = s.sigma.unwrap_or(1.0);
    for i in 0..n {
        y[i] = match s.family {
            Family::NormalLinear => eta[i] + sigma * rng.sample::<f64, _>(StandardNormal),
            Family::PoissonLog => Poisson::new(eta[i].exp()).map_err(|e| DpdError::Domain(e.to_string()))?.sample(&mut rng),
            Family::BernoulliLogit => {
                let pr = 1.0 / (1.0 + (-eta[i]).exp());
                f64::from(u8::from(Bernoulli::new(pr).map_err(|e| DpdError::Domain(e.to_string()))?.sample(&mut rng)))
            }
        };
    }
    if s.covariate_shift == CovariateShift::AfterResponse {
        shift(&mut x);
    }
    let ne = (s.e_err * n as f64).ceil() as usize;
    for i in sample(&mut rows, n, ne.min(n)) {
        y[i] = match s.family {
            Family::NormalLinear => y[i] + s.k_e * sigma,
            Family::PoissonLog => y[i] + (s.k_e * eta[i].exp().sqrt()).ceil(),
            Family::BernoulliLogit => 1.0 - y[i],
        };
    }
    Dataset::new(x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Reject,
    Accept,
    Failed,
}

/// Test outcome of one replicate in every grid cell (in grid order).
pub fn run_replicate(s: &Scenario, index: u64) -> Vec<Outcome> {
    let failed = vec![Outcome::Failed; s.grid.len()];
    let Ok(data) = generate_dataset(s, index) else {
        return failed;
    };
    run_on_dataset(s, &data).unwrap_or(failed)
}

fn run_on_dataset(s: &Scenario, data: &Dataset) -> Result<Vec<Outcome>> {
    let model = s.fit_model();
    let opts = TestOptions {
        fit: FitOptions {
            restarts: s.restarts,
            ..FitOptions::default()
        },
        method: MethodChoice::Auto,
        ..TestOptions::default()
    };
    let constraint = match s.hypothesis {
        SimHypothesis::Composite { .. } => Some(s.constraint()?),
        _ => None,
    };
    let mut fits: Vec<(f64, Result<(MdpdeFit, Option<RmdpdeFit>)>)> = Vec::new();
    let mut out = Vec::with_capacity(s.grid.len());
    for &(tau, gamma) in &s.grid {
        if !fits.iter().any(|(t, _)| *t == tau) {
            let fit = estimate::fit_mdpde_with(&model, data, tau, None, &opts.fit).and_then(|f| {
                let r = match &constraint {
                    Some(c) => Some(restrict::fit_rmdpde_with(&model, data, tau, c, Some(&f.theta_hat), &opts.fit, opts.hessian)?),
                    None => None,
                };
                Ok((f, r))
            });
            fits.push((tau, fit));
        }
        let Some((_, Ok((fit, rfit)))) = fits.iter().find(|(t, _)| *t == tau) else {
            out.push(Outcome::Failed);
            continue;
        };
        let tuning = Tuning::new(tau, gamma, s.alpha)?;
        let report = match (&s.hypothesis, &constraint, rfit) {
            (SimHypothesis::Simple { beta0 }, _, _) => {
                let th0 = ParamVector::new(DVector::from_column_slice(beta0), None);
                dpdtest::dpdts_simple_with(&model, data, &th0, &tuning, &opts, Some(fit))
            }
            (_, Some(c), Some(r)) => dpdtest::dpdts_composite_with(&model, data, c, &tuning, &opts, Some((fit, r))),
            _ => Err(DpdError::Invalid("composite hypothesis without restricted fit".into())),
        };
        out.push(match report {
            Ok(r) if r.rejects() => Outcome::Reject,
            Ok(_) => Outcome::Accept,
            Err(_) => Outcome::Failed,
        });
    }
    Ok(out)
}

/// Aggregated result of one `(τ, γ)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub tau: f64,
    pub gamma: f64,
    pub n: usize,
    pub rate: f64,
    /// `√(rate(1 − rate)/R)` with R the denominator of `rate`.
    pub se: f64,
    pub rejections: usize,
    pub replicates: usize,
    pub failures: usize,
    /// More than 5% of the replicates failed.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: Scenario,
    /// The null holds at the true θ, so `rate` is an empirical size.
    pub null_true: bool,
    pub cells: Vec<CellResult>,
}

fn aggregate(s: &Scenario, outcomes: &[Vec<Outcome>], null_true: bool) -> Vec<CellResult> {
    let reps = outcomes.len();
    s.grid
        .iter()
        .enumerate()
        .map(|(k, &(tau, gamma))| {
            let rejections = outcomes.iter().filter(|o| o[k] == Outcome::Reject).count();
            let failures = outcomes.iter().filter(|o| o[k] == Outcome::Failed).count();
            // Failures count as acceptances for size and are excluded for power.
            let denom = if null_true { reps } else { reps - failures };
            let rate = if denom == 0 { f64::NAN } else { rejections as f64 / denom as f64 };
            CellResult {
                tau,
                gamma,
                n: s.n,
                rate,
                se: (rate * (1.0 - rate) / denom as f64).sqrt(),
                rejections,
                replicates: reps,
                failures,
                flagged: failures as f64 > 0.05 * reps as f64,
            }
        })
        .collect()
}

/// Empirical rejection rate of every grid cell.
pub fn run_size_power(s: &Scenario) -> Result<SimResult> {
    s.validate()?;
    let outcomes: Vec<Vec<Outcome>> = (0..s.replicates as u64).into_par_iter().map(|k| run_replicate(s, k)).collect();
    let null_true = s.null_is_true();
    Ok(SimResult {
        scenario: s.clone(),
        null_true,
        cells: aggregate(s, &outcomes, null_true),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub tau: f64,
    pub gamma: f64,
    pub empirical: f64,
    pub se: f64,
    pub asymptotic: f64,
    pub gap: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub t: f64,
    pub rows: Vec<ConvergenceRow>,
    pub max_gap: f64,
}

/// Finite-sample power at `β = β₀ + Δ/√n` against the contiguous limit, for
/// the normal simple test with known σ. `direction` is rescaled so that
/// `Δ'ΣₓΔ = t`, with `Σₓ` the second-moment matrix of the covariate law.
pub fn run_power_convergence(base: &Scenario, sample_sizes: &[usize], direction: &[f64], t: f64) -> Result<ConvergenceTable> {
    base.validate()?;
    let SimHypothesis::Simple { beta0 } = &base.hypothesis else {
        return Err(DpdError::Invalid("power convergence uses a simple null".into()));
    };
    if base.family != Family::NormalLinear {
        return Err(DpdError::Invalid("power convergence is implemented for the normal family".into()));
    }
    if direction.len() != base.p() || !(t >= 0.0) || sample_sizes.is_empty() {
        return Err(DpdError::Invalid("direction must have length p, t >= 0, and sizes non-empty".into()));
    }
    let dir = DVector::from_column_slice(direction);
    let q = (dir.transpose() * base.sigma_x_matrix() * &dir)[(0, 0)];
    if t > 0.0 && !(q > 0.0) {
        return Err(DpdError::Invalid("direction has zero length under the covariate law".into()));
    }
    let delta = if t == 0.0 { dir * 0.0 } else { dir * (t / q).sqrt() };
    let b0 = DVector::from_column_slice(beta0);
    let sigma = base.sigma.unwrap_or(1.0);
    let mut rows = Vec::new();
    for &n in sample_sizes {
        let beta_n = &b0 + &delta / (n as f64).sqrt();
        let s = Scenario {
            n,
            beta: beta_n.iter().cloned().collect(),
            ..base.clone()
        };
        let res = run_size_power(&s)?;
        for c in res.cells {
            let asymptotic = normal_contiguous_power(base.p(), t, c.tau, sigma, base.alpha)?;
            rows.push(ConvergenceRow {
                n,
                tau: c.tau,
                gamma: c.gamma,
                empirical: c.rate,
                se: c.se,
                asymptotic,
                gap: (c.rate - asymptotic).abs(),
                failures: c.failures,
            });
        }
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(ConvergenceTable { t, rows, max_gap })
}

/// Simple-regression scenario with unknown σ testing `β = β_true`.
pub fn default_scenario() -> Scenario {
    Scenario {
        family: Family::NormalLinear,
        n: 50,
        intercept: true,
        beta: vec![1.0, 1.0],
        sigma: Some(1.0),
        sigma_x: 1.0,
        e_x: 0.0,
        e_err: 0.0,
        k_x: default_k_x(),
        k_e: default_k_e(),
        covariate_shift: CovariateShift::default(),
        hypothesis: SimHypothesis::Composite {
            l: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            l0: vec![1.0, 1.0],
        },
        grid: vec![(0.0, 0.0), (0.25, 0.25), (0.5, 0.5), (1.0, 1.0)],
        alpha: 0.05,
        replicates: 1000,
        base_seed: 20_170_101,
        restarts: default_restarts(),
    }
}

/// Power counterpart of [`default_scenario`]: the intercept sits below the
/// null value, so upward error outliers pull the fit towards the null.
pub fn default_power_scenario() -> Scenario {
    Scenario {
        beta: vec![0.6, 1.0],
        ..default_scenario()
    }
}
