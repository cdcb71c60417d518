//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dpd_core::data::salinity;
use dpd_core::dpdtest::{self, normal_contiguous_power, MethodChoice, TestMethod};
use dpd_core::estimate::{fit_mdpde, hn_gradient, hn_objective};
use dpd_core::influence::{self, ContaminationSpec};
use dpd_core::quadform::{mixture_weights, qf_upper_tail, QuadFormDist, SeriesControl};
use dpd_core::restrict::normal_projection;
use dpd_core::simharness::{default_scenario, run_power_convergence, run_size_power, Scenario, SimHypothesis};
use dpd_core::{Dataset, Family, Hypothesis, LinearConstraint, Model, ParamVector, ScaleRole, TestOptions, Tuning};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;

const GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion(id: u32, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    println!(
        "criterion {id:>2} {} [{name}] ({secs:.1} s): {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v.pass
}

fn grid_pairs() -> Vec<(f64, f64)> {
    GRID.iter().flat_map(|&t| GRID.iter().map(move |&g| (t, g))).collect()
}

fn tuning(tau: f64, gamma: f64) -> Tuning {
    Tuning::new(tau, gamma, 0.05).unwrap()
}

/// Intercept plus `p − 1` standard normal covariates; normal, Poisson or Bernoulli responses.
fn random_data(family: Family, n: usize, p: usize, sigma: f64, seed: u64) -> (Dataset, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    let beta = DVector::from_fn(p, |j, _| if j == 0 { 0.5 } else { 0.4 / j as f64 });
    let eta = &x * &beta;
    let y = DVector::from_fn(n, |i, _| match family {
        Family::NormalLinear => eta[i] + sigma * rng.sample::<f64, _>(StandardNormal),
        Family::PoissonLog => Poisson::new(eta[i].exp()).unwrap().sample(&mut rng),
        Family::BernoulliLogit => f64::from(u8::from(Bernoulli::new(1.0 / (1.0 + (-eta[i]).exp())).unwrap().sample(&mut rng))),
    });
    (Dataset::new(x, y).unwrap(), beta)
}

fn zeta1(gamma: f64, tau: f64, sigma: f64) -> f64 {
    ((2.0 * std::f64::consts::PI).sqrt() * sigma).powf(-gamma) * (1.0 + gamma).powf(-0.5) * (1.0 + tau * tau / (1.0 + 2.0 * tau)).powf(1.5)
}

fn salinity_fits() -> Verdict {
    let d = salinity();
    let targets: [(f64, [f64; 5]); 3] = [
        (0.0, [9.6, 0.8, -0.03, -0.3, 1.23]),
        (0.5, [18.4, 0.72, -0.2, -0.63, 0.87]),
        (1.0, [19.19, 0.71, -0.18, -0.66, 0.87]),
    ];
    let mut misses = Vec::new();
    let mut check = |label: String, fit: &ParamVector, want: &[f64; 5]| {
        let got: Vec<f64> = fit.beta.iter().copied().chain(fit.scale).collect();
        for (k, (g, w)) in got.iter().zip(want).enumerate() {
            if (g - w).abs() > 0.05 {
                misses.push(format!("{label} component {k}: {g:.4} vs {w}"));
            }
        }
    };
    for (tau, want) in &targets {
        check(format!("tau={tau}"), &fit_mdpde(&Model::normal(), &d, *tau, None).unwrap().theta_hat, want);
    }
    let dropped = d.drop_rows(&[4, 15]).unwrap();
    check("MLE without cases 5,16".into(), &fit_mdpde(&Model::normal(), &dropped, 0.0, None).unwrap().theta_hat, &[23.39, 0.70, -0.25, -0.84, 0.91]);
    verdict(misses.is_empty(), if misses.is_empty() { "all components within 0.05".into() } else { misses.join("; ") })
}

fn lrt_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let n = 20 + 3 * k as usize;
        let p = 2 + (k % 3) as usize;
        let (d, beta) = random_data(Family::NormalLinear, n, p, 0.7 + 0.05 * k as f64, 100 + k);
        let (x, y) = (d.design(), d.response());
        let xtx = x.transpose() * x;
        let bhat = xtx.clone().cholesky().unwrap().solve(&(x.transpose() * y));
        let beta0 = beta.map(|b| b + 0.1);

        let sigma0 = 0.9;
        let th0 = ParamVector::new(beta0.clone(), None);
        let simple = dpdtest::dpdts_simple(&Model::normal_known_scale(sigma0), &d, &th0, &tuning(0.0, 0.0)).unwrap();
        let diff = &bhat - &beta0;
        let oracle_t = (diff.transpose() * &xtx * &diff)[(0, 0)] / (sigma0 * sigma0);
        worst = worst.max((simple.statistic - oracle_t).abs() / oracle_t.max(1.0));

        let c = LinearConstraint::pin_beta(&beta0, ScaleRole::Free).unwrap();
        let comp = dpdtest::dpdts_composite(&Model::normal(), &d, &c, &tuning(0.0, 0.0)).unwrap();
        let s2_hat = (y - x * &bhat).norm_squared() / n as f64;
        let s2_til = (y - x * &beta0).norm_squared() / n as f64;
        let oracle_s = n as f64 * ((s2_til / s2_hat).ln() - 1.0 + s2_hat / s2_til) + (diff.transpose() * &xtx * &diff)[(0, 0)] / s2_til;
        worst = worst.max((comp.statistic - oracle_s).abs() / oracle_s.max(1.0));
    }
    let unit = [0.3, 1.0, 2.5].iter().all(|&s| dpd_core::models::normal_null_weight(0.0, 0.0, s) == 1.0);
    verdict(worst <= 1e-8 && unit, format!("max relative gap {worst:.2e} over 20 datasets; zeta1(0,0) == 1: {unit}"))
}

fn null_structure() -> Verdict {
    let (d, beta) = random_data(Family::NormalLinear, 40, 3, 1.1, 7);
    let l = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let c = LinearConstraint::new(l.clone(), l.transpose() * &beta, ScaleRole::Free).unwrap();
    let opts = TestOptions {
        method: MethodChoice::Generic,
        ..TestOptions::default()
    };
    let sigma0 = 1.3;
    let th0 = ParamVector::new(beta.map(|b| b - 0.05), None);
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (tau, gamma) in grid_pairs() {
        let t = tuning(tau, gamma);
        let s = dpdtest::dpdts(&Model::normal_known_scale(sigma0), &d, &Hypothesis::Simple { theta0: th0.clone() }, &t, &opts).unwrap();
        let z = zeta1(gamma, tau, sigma0);
        if s.method != TestMethod::GenericEigen || s.null_dist.rank() != 3 {
            bad.push(format!("simple ({tau},{gamma}) rank {}", s.null_dist.rank()));
        }
        for w in s.null_dist.weights() {
            worst = worst.max((w - z).abs() / z);
        }
        let r = dpdtest::dpdts(&Model::normal(), &d, &Hypothesis::Composite { constraint: c.clone() }, &t, &opts).unwrap();
        let z = zeta1(gamma, tau, r.restricted_estimate.as_ref().unwrap().scale.unwrap());
        if r.null_dist.rank() != 2 {
            bad.push(format!("composite ({tau},{gamma}) rank {}", r.null_dist.rank()));
        }
        for w in r.null_dist.weights() {
            worst = worst.max((w - z).abs() / z);
        }
    }
    let q = DMatrix::identity(3, 3) - normal_projection(d.design(), &l).unwrap();
    let idem = (&q * &q - &q).amax();
    let trace_gap = (q.trace() - 2.0).abs();
    let rank = q.clone().svd(false, false).singular_values.iter().filter(|s| **s > 1e-10).count();
    let pass = worst <= 1e-8 && idem <= 1e-10 && trace_gap <= 1e-10 && rank == 2 && bad.is_empty();
    verdict(
        pass,
        format!("max weight gap {worst:.2e}; |Q^2-Q| {idem:.1e}; trace gap {trace_gap:.1e}; rank {rank}; {}", bad.join(", ")),
    )
}

fn mc_tail(w: &[f64], delta: &[f64], x: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<Normal<f64>> = delta.iter().map(|d| Normal::new(d.sqrt(), 1.0).unwrap()).collect();
    let hits = (0..draws)
        .filter(|_| w.iter().zip(&comps).map(|(wj, nj)| wj * nj.sample(&mut rng).powi(2)).sum::<f64>() > x)
        .count();
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

fn chisq_engine() -> Verdict {
    let cases: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..50u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + k);
            let r = 1 + (k % 6) as usize;
            let w: Vec<f64> = (0..r).map(|_| rng.random_range(0.1..3.0)).collect();
            let d: Vec<f64> = (0..r).map(|j| if (j + k as usize) % 2 == 0 { 0.0 } else { rng.random_range(0.0..4.0) }).collect();
            let mean: f64 = w.iter().zip(&d).map(|(a, b)| a * (1.0 + b)).sum();
            (w, d, mean * rng.random_range(0.4..2.2))
        })
        .collect();
    let fails: Vec<String> = cases
        .par_iter()
        .enumerate()
        .filter_map(|(k, (w, d, x))| {
            let dist = QuadFormDist::new(w.clone(), d.clone()).unwrap();
            let tail = qf_upper_tail(&dist, *x, &SeriesControl::default()).unwrap();
            let (mc, se) = mc_tail(w, d, *x, 1_000_000, 9000 + k as u64);
            let mut msgs = Vec::new();
            if (tail.prob - mc).abs() > tail.residual_bound.max(4.0 * se) {
                msgs.push(format!("case {k}: series {:.5} vs MC {mc:.5} (se {se:.1e})", tail.prob));
            }
            let fine = SeriesControl {
                max_terms: 200_000,
                target_error: 1e-12,
            };
            let series = mixture_weights(&dist, &fine);
            let sum: f64 = series.coefficients.iter().sum();
            if !series.converged || (sum - 1.0).abs() > 1e-10 {
                msgs.push(format!("case {k}: weights sum to {sum}"));
            }
            let exact = series.upper_tail(*x);
            let short = qf_upper_tail(&dist, *x, &SeriesControl { max_terms: 4, target_error: 1e-12 }).unwrap();
            if (short.prob - exact.prob).abs() > short.residual_bound + exact.residual_bound + 1e-15 {
                msgs.push(format!("case {k}: truncated tail outside its bound"));
            }
            (!msgs.is_empty()).then(|| msgs.join("; "))
        })
        .collect();
    verdict(fails.is_empty(), if fails.is_empty() { "50 cases within max(bound, 4 SE); weights and truncation bounds hold".into() } else { fails.join(" | ") })
}

fn size_calibration() -> Verdict {
    let s = Scenario {
        n: 100,
        replicates: 2000,
        grid: grid_pairs(),
        ..default_scenario()
    };
    let r = run_size_power(&s).unwrap();
    let out: Vec<String> = r.cells.iter().filter(|c| !(0.03..=0.08).contains(&c.rate)).map(|c| format!("({},{}) {:.4}", c.tau, c.gamma, c.rate)).collect();
    let range = r.cells.iter().fold((1.0f64, 0.0f64), |(lo, hi), c| (lo.min(c.rate), hi.max(c.rate)));
    verdict(out.is_empty(), format!("sizes in [{:.4}, {:.4}] over 16 cells{}", range.0, range.1, if out.is_empty() { String::new() } else { format!("; outside: {}", out.join(", ")) }))
}

fn power_convergence() -> Verdict {
    let base = Scenario {
        intercept: false,
        beta: vec![0.0, 0.0],
        sigma_x: 5f64.sqrt(),
        hypothesis: SimHypothesis::Simple { beta0: vec![0.0, 0.0] },
        grid: GRID.iter().map(|&t| (t, t)).collect(),
        replicates: 5000,
        ..default_scenario()
    };
    let tab = run_power_convergence(&base, &[100], &[1.0, 1.0], 5.0).unwrap();
    let detail: Vec<String> = tab.rows.iter().map(|r| format!("tau={} emp {:.4} asym {:.4}", r.tau, r.empirical, r.asymptotic)).collect();
    verdict(tab.max_gap <= 0.05, format!("max gap {:.4}; {}", tab.max_gap, detail.join(", ")))
}

fn robustness_ordering() -> Verdict {
    let s = Scenario {
        n: 50,
        e_x: 0.1,
        e_err: 0.1,
        replicates: 2000,
        ..default_scenario()
    };
    let r = run_size_power(&s).unwrap();
    let dev: Vec<f64> = r.cells.iter().map(|c| (c.rate - s.alpha).abs()).collect();
    let mut ok = true;
    for k in 1..dev.len() {
        let slack = 2.0 * (r.cells[k].se.powi(2) + r.cells[k - 1].se.powi(2)).sqrt();
        ok &= dev[k] <= dev[k - 1] + slack;
    }
    let ratio = dev[0] / dev[2];
    let sizes: Vec<String> = r.cells.iter().map(|c| format!("tau={} size {:.4}", c.tau, c.rate)).collect();
    verdict(ok && ratio >= 3.0, format!("monotone within 2 SE: {ok}; dev(0)/dev(0.5) = {ratio:.2}; {}", sizes.join(", ")))
}

fn influence_suite() -> Verdict {
    let (d, beta) = random_data(Family::NormalLinear, 25, 3, 1.0, 11);
    let x = d.design();
    let sigma0 = 1.2;
    let known = Model::normal_known_scale(sigma0);
    let th0 = ParamVector::new(beta.clone(), None);
    let simple = Hypothesis::Simple { theta0: th0.clone() };
    let free_th0 = ParamVector::new(beta.clone(), Some(sigma0));
    let l = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
    let comp = Hypothesis::Composite {
        constraint: LinearConstraint::new(l.clone(), l.transpose() * &beta, ScaleRole::Free).unwrap(),
    };
    let mut msgs = Vec::new();

    let mut if1: f64 = 0.0;
    for (tau, gamma) in grid_pairs() {
        for t in [-30.0, -2.0, 0.5, 7.0] {
            let spec = ContaminationSpec::single(3, t);
            if1 = if1.max(influence::if1_test(&known, x, &simple, &th0, &tuning(tau, gamma), &spec).unwrap().abs());
            if1 = if1.max(influence::if1_test(&Model::normal(), x, &comp, &free_th0, &tuning(tau, gamma), &spec).unwrap().abs());
        }
    }
    if if1 > 1e-10 {
        msgs.push(format!("first-order IF {if1:.1e}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut if2: f64 = 0.0;
    for _ in 0..200 {
        let (tau, gamma) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let i0 = rng.random_range(0..25);
        let t = rng.random_range(-6.0..6.0);
        let closed = influence::normal_if2_simple(x, i0, t, &beta, sigma0, tau, gamma).unwrap();
        let generic = influence::if2_test(&known, x, &simple, None, &tuning(tau, gamma), &ContaminationSpec::single(i0, t)).unwrap();
        if2 = if2.max((closed - generic).abs() / closed.abs().max(1.0));
    }
    if if2 > 1e-8 {
        msgs.push(format!("IF2 closed-form gap {if2:.1e}"));
    }

    let zero = DVector::zeros(3);
    let mut lif: f64 = 0.0;
    for (tau, gamma) in grid_pairs() {
        let m = x.row(0).transpose().dot(&beta);
        for k in 0..=40 {
            let t = m + sigma0 * (-20.0 + k as f64);
            let pi = influence::pif_lif(&known, x, &simple, None, &zero, &ContaminationSpec::single(0, t), &tuning(tau, gamma)).unwrap();
            lif = lif.max(pi.lif.unwrap().abs()).max(pi.lif_eps.abs());
        }
    }
    if lif > 1e-6 {
        msgs.push(format!("LIF {lif:.1e}"));
    }

    let mut growth = Vec::new();
    for tau in GRID {
        let t = tuning(tau, tau);
        let scan = |hw: f64| {
            influence::scan_grid(&known, x, &th0, 2, hw, 201, |tv| {
                influence::if2_test(&known, x, &simple, None, &t, &ContaminationSpec::single(2, tv))
            })
            .unwrap()
        };
        let (a, b) = (scan(10.0), scan(20.0));
        let grows = b.max > a.max * 1.5;
        let stable = (b.max - a.max).abs() <= 1e-3 * a.max;
        if (tau == 0.0 && !grows) || (tau > 0.0 && !stable) {
            msgs.push(format!("tau={tau}: max {:.4} at half-width 10 vs {:.4} at 20", a.max, b.max));
        }
        growth.push(format!("tau={tau} {:.3}->{:.3}", a.max, b.max));
    }
    verdict(
        msgs.is_empty(),
        format!(
            "IF1 {if1:.1e}; IF2 gap {if2:.1e}; LIF {lif:.1e}; grid maxima {}{}",
            growth.join(", "),
            if msgs.is_empty() { String::new() } else { format!("; failures: {}", msgs.join(", ")) }
        ),
    )
}

fn flat_step(model: &Model, theta: &ParamVector, j: usize, h: f64, p: usize) -> ParamVector {
    let mut v = model.flatten(theta);
    v[j] += h;
    model.unflatten(&v, p)
}

fn derivative_suite() -> Verdict {
    let mut msgs = Vec::new();
    let mut grad_gap: f64 = 0.0;
    let mut hess_gap: f64 = 0.0;
    let cases = [
        (Model::normal(), Family::NormalLinear, Some(1.3)),
        (Model::poisson(), Family::PoissonLog, None),
        (Model::bernoulli(), Family::BernoulliLogit, None),
    ];
    for (k, (model, family, scale)) in cases.iter().enumerate() {
        let (d, beta) = random_data(*family, 30, 3, 1.0, 40 + k as u64);
        let theta = ParamVector::new(beta.map(|b| b * 0.7 + 0.1), *scale);
        let dim = model.dim(3);
        for tau in [0.0, 0.3, 0.8] {
            let g = hn_gradient(model, &d, &theta, tau).unwrap();
            let fd = |h: f64, j: usize| {
                (hn_objective(model, &d, &flat_step(model, &theta, j, h, 3), tau).unwrap()
                    - hn_objective(model, &d, &flat_step(model, &theta, j, -h, 3), tau).unwrap())
                    / (2.0 * h)
            };
            for j in 0..dim {
                let rich = (4.0 * fd(5e-4, j) - fd(1e-3, j)) / 3.0;
                grad_gap = grad_gap.max((g[j] - rich).abs() / g.amax().max(1e-3));
            }
        }
        for gamma in [0.0, 0.25, 0.7] {
            let i = 4;
            let a = model.a_matrix(d.design(), i, &theta, gamma).unwrap();
            let dv = |u: &ParamVector| model.dpd_divergence(d.design(), i, u, &theta, gamma).unwrap();
            let second = |h: f64, j: usize, l: usize| {
                let s = |sj: f64, sl: f64| dv(&flat_step(model, &flat_step(model, &theta, j, sj * h, 3), l, sl * h, 3));
                (s(1.0, 1.0) - s(1.0, -1.0) - s(-1.0, 1.0) + s(-1.0, -1.0)) / (4.0 * h * h)
            };
            let mut diff: f64 = 0.0;
            for j in 0..dim {
                for l in 0..dim {
                    let rich = (4.0 * second(1e-3, j, l) - second(2e-3, j, l)) / 3.0;
                    diff = diff.max((a[(j, l)] - rich).abs());
                }
            }
            hess_gap = hess_gap.max(diff / a.amax());
        }
    }
    if grad_gap > 1e-6 {
        msgs.push(format!("gradient gap {grad_gap:.1e}"));
    }
    if hess_gap > 1e-5 {
        msgs.push(format!("A-matrix gap {hess_gap:.1e}"));
    }

    let (d, beta) = random_data(Family::NormalLinear, 30, 3, 1.0, 60);
    let mut pif_gap: f64 = 0.0;
    for (tau, gamma) in [(0.0, 0.0), (0.25, 0.5), (0.5, 0.5), (1.0, 0.25)] {
        for (model, theta0) in [
            (Model::normal_known_scale(1.0), ParamVector::new(beta.clone(), None)),
            (Model::normal(), ParamVector::new(beta.clone(), Some(1.0))),
        ] {
            let hyp = Hypothesis::Simple { theta0 };
            let delta = DVector::from_fn(model.dim(3), |j, _| if j == 1 { 1.5 } else { 0.5 });
            for t in [-3.0, 0.7, 4.0] {
                let pi = influence::pif_lif(&model, d.design(), &hyp, None, &delta, &ContaminationSpec::single(6, t), &tuning(tau, gamma)).unwrap();
                pif_gap = pif_gap.max((pi.pif.unwrap() - pi.pif_eps).abs());
            }
        }
    }
    if pif_gap > 1e-3 {
        msgs.push(format!("PIF gap {pif_gap:.1e}"));
    }
    verdict(
        msgs.is_empty(),
        format!("gradient {grad_gap:.1e} (tol 1e-6); A-matrix {hess_gap:.1e} (tol 1e-5); PIF {pif_gap:.1e} (tol 1e-3)"),
    )
}

fn contiguous_power_shape() -> Verdict {
    let mut msgs = Vec::new();
    let ts = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0];
    for p in 1..=6 {
        for tau in GRID {
            let at_zero = normal_contiguous_power(p, 0.0, tau, 1.0, 0.05).unwrap();
            if (at_zero - 0.05).abs() > 1e-10 {
                msgs.push(format!("p={p} tau={tau}: power at t=0 {at_zero}"));
            }
            let vals: Vec<f64> = ts.iter().map(|&t| normal_contiguous_power(p, t, tau, 1.0, 0.05).unwrap()).collect();
            if vals.windows(2).any(|w| w[1] < w[0]) {
                msgs.push(format!("p={p} tau={tau}: not monotone in t"));
            }
        }
    }
    for &t in &ts[1..] {
        for tau in GRID {
            let by_p: Vec<f64> = (1..=6).map(|p| normal_contiguous_power(p, t, tau, 1.0, 0.05).unwrap()).collect();
            if by_p.windows(2).any(|w| w[1] > w[0]) {
                msgs.push(format!("t={t} tau={tau}: not decreasing in p"));
            }
        }
        for p in 1..=6 {
            let by_tau: Vec<f64> = GRID.iter().map(|&tau| normal_contiguous_power(p, t, tau, 1.0, 0.05).unwrap()).collect();
            if by_tau.windows(2).any(|w| w[1] > w[0]) {
                msgs.push(format!("t={t} p={p}: not decreasing in tau"));
            }
        }
    }
    verdict(
        msgs.is_empty(),
        if msgs.is_empty() {
            "alpha at t=0, increasing in t, decreasing in p and tau on the grid".into()
        } else {
            msgs.join("; ")
        },
    )
}

fn main() {
    let results = [
        criterion(1, "salinity estimates", salinity_fits),
        criterion(2, "LRT equivalence", lrt_equivalence),
        criterion(3, "null distribution structure", null_structure),
        criterion(4, "weighted chi-square engine", chisq_engine),
        criterion(5, "size calibration", size_calibration),
        criterion(6, "power convergence", power_convergence),
        criterion(7, "robustness ordering", robustness_ordering),
        criterion(8, "influence suite", influence_suite),
        criterion(9, "analytic derivatives", derivative_suite),
        criterion(10, "contiguous power shape", contiguous_power_shape),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
