//! Distribution of `Q = Σ ζᵢ χ²₁(δᵢ)`, a positive linear combination of
//! independent non-central chi-square variables with one degree of freedom.
//!
//! The tail is evaluated as a mixture of central chi-square tails with
//! `r + 2v` degrees of freedom, `P(Q > x) = Σ_v c_v P(χ²_{r+2v} > x/ζ₍₁₎)`,
//! where `ζ₍₁₎` is the smallest weight. The coefficients follow Ruben's
//! recursion, so `1 − Σ_{v≤N} c_v` bounds the truncation error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{DpdError, Result};

/// Relative tolerance below which eigenvalue weights are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Weighted sum of independent non-central χ²₁ variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadFormDist {
    weights: Vec<f64>,
    noncentralities: Vec<f64>,
}

impl QuadFormDist {
    /// Builds the distribution, dropping weights below `RANK_TOLERANCE · max`.
    pub fn new(weights: Vec<f64>, noncentralities: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(weights, noncentralities, RANK_TOLERANCE)
    }

    pub fn central(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Self::new(weights, vec![0.0; n])
    }

    pub fn with_tolerance(
        weights: Vec<f64>,
        noncentralities: Vec<f64>,
        rel_tol: f64,
    ) -> Result<Self> {
        if weights.len() != noncentralities.len() {
            return Err(DpdError::Invalid(format!(
                "{} weights but {} non-centralities",
                weights.len(),
                noncentralities.len()
            )));
        }
        if weights.iter().chain(&noncentralities).any(|v| !v.is_finite()) {
            return Err(DpdError::Domain("non-finite weight or non-centrality".into()));
        }
        if let Some(d) = noncentralities.iter().find(|&&d| d < 0.0) {
            return Err(DpdError::Domain(format!("negative non-centrality {d}")));
        }
        let max = weights.iter().fold(0.0_f64, |a, &w| a.max(w.abs()));
        let cut = rel_tol * max;
        if let Some(w) = weights.iter().find(|&&w| w < -cut) {
            return Err(DpdError::Domain(format!("negative weight {w}")));
        }
        let (w, d): (Vec<f64>, Vec<f64>) = weights
            .into_iter()
            .zip(noncentralities)
            .filter(|(w, _)| *w > cut && *w > 0.0)
            .unzip();
        Ok(Self {
            weights: w,
            noncentralities: d,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noncentralities(&self) -> &[f64] {
        &self.noncentralities
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.noncentralities)
            .map(|(w, d)| w * (1.0 + d))
            .sum()
    }

    /// Same weights, new non-centralities.
    pub fn with_noncentralities(&self, noncentralities: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(self.weights.clone(), noncentralities, 0.0)
    }
}

/// Truncation control for the mixture series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub target_error: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            max_terms: 10_000,
            target_error: 1e-8,
        }
    }
}

/// Tail probability with an error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub prob: f64,
    /// The true tail lies within `prob ± residual_bound`.
    pub residual_bound: f64,
    pub terms: usize,
    pub converged: bool,
}

/// Central chi-square mixture representation of a [`QuadFormDist`].
#[derive(Clone, Debug)]
pub struct MixtureSeries {
    /// `c_0, …, c_N`.
    pub coefficients: Vec<f64>,
    /// `1 − Σ c_v`, the truncation bound.
    pub residual: f64,
    pub converged: bool,
    /// Smallest weight ζ₍₁₎.
    pub scale: f64,
    /// Number of weights r.
    pub df: usize,
}

/// Mixture coefficients by Ruben's recursion:
/// `c_0 = Π(ζ₍₁₎/ζⱼ)^{1/2} e^{−Σδ/2}`, `c_v = (1/2v) Σ_{k<v} g_{v−k} c_k` with
/// `g_k = Σ qⱼ^k + k ζ₍₁₎ Σ (δⱼ/ζⱼ) qⱼ^{k−1}` and `qⱼ = 1 − ζ₍₁₎/ζⱼ`.
pub fn mixture_weights(dist: &QuadFormDist, ctl: &SeriesControl) -> MixtureSeries {
    let r = dist.rank();
    if r == 0 {
        return MixtureSeries {
            coefficients: vec![],
            residual: 0.0,
            converged: true,
            scale: 0.0,
            df: 0,
        };
    }
    let w = dist.weights();
    let delta = dist.noncentralities();
    let beta = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let q: Vec<f64> = w.iter().map(|&wj| (1.0 - beta / wj).max(0.0)).collect();
    let dw: Vec<f64> = delta.iter().zip(w).map(|(d, wj)| d / wj).collect();
    let log_c0: f64 = w.iter().map(|&wj| 0.5 * (beta / wj).ln()).sum::<f64>()
        - 0.5 * delta.iter().sum::<f64>();

    // Scaled coefficients a_v with c_v = a_v · exp(log_scale); rescaled when
    // they grow large so that heavily shifted forms do not underflow c_0.
    const BIG: f64 = 1e250;
    let mut a: Vec<f64> = Vec::with_capacity(256);
    a.push(1.0);
    let mut log_scale = log_c0;
    let mut g: Vec<f64> = vec![0.0];
    let mut qpow_prev = vec![1.0; r];
    let mut total = log_c0.exp();
    let mut residual = (1.0 - total).max(0.0);
    let mut converged = residual <= ctl.target_error;
    let mut v = 0usize;
    while !converged && v < ctl.max_terms {
        v += 1;
        let vf = v as f64;
        let mut gv = 0.0;
        for j in 0..r {
            let qv = qpow_prev[j] * q[j];
            gv += qv + vf * beta * dw[j] * qpow_prev[j];
            qpow_prev[j] = qv;
        }
        g.push(gv);
        let mut s = 0.0;
        for k in 0..v {
            s += g[v - k] * a[k];
        }
        let av = s / (2.0 * vf);
        a.push(av);
        if av > BIG {
            for x in a.iter_mut() {
                *x /= BIG;
            }
            log_scale += BIG.ln();
        }
        let cv = if a[v] > 0.0 {
            (log_scale + a[v].ln()).exp()
        } else {
            0.0
        };
        total += cv;
        residual = (1.0 - total).max(0.0);
        converged = residual <= ctl.target_error;
    }
    let coefficients = a
        .iter()
        .map(|&av| if av > 0.0 { (log_scale + av.ln()).exp() } else { 0.0 })
        .collect();
    MixtureSeries {
        coefficients,
        residual,
        converged,
        scale: beta,
        df: r,
    }
}

impl MixtureSeries {
    /// `P(Q > x)` from the truncated series.
    ///
    /// With `U_N = Σ c_v P(χ²_{r+2v} > y)` the omitted mass lies between
    /// `e_N · P(χ²_{r+2N+2} > y)` and `e_N`; the midpoint is reported.
    pub fn upper_tail(&self, x: f64) -> TailProbability {
        let terms = self.coefficients.len();
        if self.df == 0 {
            return TailProbability {
                prob: 0.0,
                residual_bound: 0.0,
                terms,
                converged: true,
            };
        }
        if x <= 0.0 {
            return TailProbability {
                prob: 1.0,
                residual_bound: 0.0,
                terms,
                converged: true,
            };
        }
        let y = x / self.scale;
        let mut k = self.df as f64;
        let mut sf = gamma_ur(k / 2.0, y / 2.0);
        let ln_half_y = (y / 2.0).ln();
        let mut log_t = (k / 2.0) * ln_half_y - y / 2.0 - ln_gamma(k / 2.0 + 1.0);
        let mut upper = 0.0;
        for &c in &self.coefficients {
            upper += c * sf;
            sf = (sf + log_t.exp()).min(1.0);
            k += 2.0;
            log_t += ln_half_y - (k / 2.0).ln();
        }
        let e = self.residual;
        let lo = upper + e * sf;
        let hi = upper + e;
        TailProbability {
            prob: (0.5 * (lo + hi)).clamp(0.0, 1.0),
            residual_bound: 0.5 * (hi - lo),
            terms,
            converged: self.converged,
        }
    }
}

/// `P(Q > x)` with its truncation bound. When `max_terms` is hit first the
/// value is still returned with `converged = false`.
pub fn qf_upper_tail(dist: &QuadFormDist, x: f64, ctl: &SeriesControl) -> Result<TailProbability> {
    if !(x >= 0.0) {
        return Err(DpdError::Domain(format!("tail evaluated at x = {x}")));
    }
    Ok(mixture_weights(dist, ctl).upper_tail(x))
}

/// The `p`-quantile of `Q`.
pub fn qf_quantile(dist: &QuadFormDist, p: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DpdError::Domain(format!("quantile probability {p}")));
    }
    if dist.rank() == 0 {
        return Ok(0.0);
    }
    let series = mixture_weights(dist, ctl);
    let target = 1.0 - p;
    let tail = |x: f64| series.upper_tail(x).prob;
    let mut lo = 0.0;
    let mut hi = dist.mean().max(f64::MIN_POSITIVE);
    let mut guard = 0;
    while tail(hi) > target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(DpdError::Series {
                residual: series.residual,
                terms: series.coefficients.len(),
            });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo estimate of `P(Q > x)` and its binomial standard error.
pub fn qf_mc_tail(dist: &QuadFormDist, x: f64, n_draws: usize, seed: u64) -> Result<(f64, f64)> {
    if n_draws < 1000 {
        return Err(DpdError::Domain(format!("n_draws = {n_draws} < 1000")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = dist.noncentralities().iter().map(|d| d.sqrt()).collect();
    let mut hits = 0usize;
    for _ in 0..n_draws {
        let mut q = 0.0;
        for (w, s) in dist.weights().iter().zip(&shift) {
            let z: f64 = StandardNormal.sample(&mut rng);
            q += w * (z + s) * (z + s);
        }
        if q > x {
            hits += 1;
        }
    }
    let p = hits as f64 / n_draws as f64;
    Ok((p, (p * (1.0 - p) / n_draws as f64).sqrt()))
}

fn check_chisq_args(x: f64, df: u32, ncp: f64) -> Result<()> {
    if df == 0 {
        return Err(DpdError::Domain("chi-square with zero degrees of freedom".into()));
    }
    if !(x >= 0.0) || !(ncp >= 0.0) || !ncp.is_finite() {
        return Err(DpdError::Domain(format!("chi-square at x = {x}, ncp = {ncp}")));
    }
    Ok(())
}

/// `(cdf, sf)` of a non-central chi-square as a Poisson mixture of central
/// ones, truncated once the remaining Poisson mass is below 1e-14.
fn chisq_both(x: f64, df: u32, ncp: f64) -> (f64, f64) {
    let k0 = df as f64;
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    if ncp == 0.0 {
        return (gamma_lr(k0 / 2.0, x / 2.0), gamma_ur(k0 / 2.0, x / 2.0));
    }
    let lambda = ncp / 2.0;
    let ln_lambda = lambda.ln();
    let ln_half_x = (x / 2.0).ln();
    let mut k = k0;
    let mut cdf_k = gamma_lr(k / 2.0, x / 2.0);
    let mut sf_k = gamma_ur(k / 2.0, x / 2.0);
    let mut log_t = (k / 2.0) * ln_half_x - x / 2.0 - ln_gamma(k / 2.0 + 1.0);
    let mut cdf = 0.0;
    let mut sf = 0.0;
    let mut j = 0u64;
    loop {
        let jf = j as f64;
        let w = (-lambda + jf * ln_lambda - ln_gamma(jf + 1.0)).exp();
        cdf += w * cdf_k;
        sf += w * sf_k;
        // Past the mode the Poisson tail is below a geometric series with ratio λ/(j+1).
        let ratio = lambda / (jf + 1.0);
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < 1e-15 {
            break;
        }
        let t = log_t.exp();
        cdf_k = (cdf_k - t).max(0.0);
        sf_k = (sf_k + t).min(1.0);
        k += 2.0;
        log_t += ln_half_x - (k / 2.0).ln();
        j += 1;
        if j > 100_000_000 {
            break;
        }
    }
    (cdf.clamp(0.0, 1.0), sf.clamp(0.0, 1.0))
}

/// `P(χ²_{df}(ncp) ≤ x)`.
pub fn chisq_cdf(x: f64, df: u32, ncp: f64) -> Result<f64> {
    check_chisq_args(x, df, ncp)?;
    Ok(chisq_both(x, df, ncp).0)
}

/// `P(χ²_{df}(ncp) > x)`, accurate in the far upper tail.
pub fn chisq_sf(x: f64, df: u32, ncp: f64) -> Result<f64> {
    check_chisq_args(x, df, ncp)?;
    Ok(chisq_both(x, df, ncp).1)
}

/// Inverse of [`chisq_cdf`] in `x`.
pub fn chisq_quantile(p: f64, df: u32, ncp: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DpdError::Domain(format!("quantile probability {p}")));
    }
    check_chisq_args(0.0, df, ncp)?;
    let below = |x: f64| {
        let (cdf, sf) = chisq_both(x, df, ncp);
        if p > 0.5 {
            sf > 1.0 - p
        } else {
            cdf < p
        }
    };
    let mut lo = 0.0;
    let mut hi = (df as f64 + ncp).max(1.0);
    while below(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
