//! Command implementations.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Result};
use dpd_core::dpdtest::{self, CyclicDesign, MethodChoice, PowerApprox, SampleSize};
use dpd_core::estimate::{self, MdpdeFit};
use dpd_core::influence::{self, ContaminationSpec, GridScan, PowerInfluence};
use dpd_core::models::design_diagnostics;
use dpd_core::quadform::SeriesControl;
use dpd_core::restrict::{self, RmdpdeFit};
use dpd_core::simharness::{self, Scenario};
use dpd_core::{Dataset, DpdError, FitOptions, HessianMode, Hypothesis, LinearConstraint, Model, ParamVector, ScaleRole, TestOptions, TestReport, Tuning};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::input::{self, input_error};
use crate::{AlternativeArgs, Command, DataArgs, FamilyArg, HypothesisArgs, OutputArgs, TuningArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Failed,
}

/// One grid cell; `result` is absent and `error` set when the cell failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell<T> {
    pub tau: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<T>,
}

#[derive(Serialize)]
struct Document<'a, T> {
    command: &'a str,
    n_obs: usize,
    p: usize,
    hypothesis: Option<&'a Hypothesis>,
    cells: &'a [Cell<T>],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub fit: MdpdeFit,
    pub standard_errors: DVector<f64>,
    pub restricted: Option<RmdpdeFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceResult {
    pub theta0: ParamVector,
    pub row: usize,
    pub if2: GridScan,
    pub power_influence: Option<PowerInfluence>,
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => {
            let (model, data) = setup(&a.data)?;
            let hyp = hypothesis(&model, data.p(), &a.hyp)?;
            let opts = test_options(&a.tuning)?;
            let taus = tuning_grid(&a.tuning)?.into_iter().fold(Vec::<f64>::new(), |mut v, t| {
                if !v.contains(&t.tau) {
                    v.push(t.tau);
                }
                v
            });
            let cells: Vec<Cell<FitResult>> = taus
                .iter()
                .map(|&tau| {
                    let res = estimate::fit_mdpde_with(&model, &data, tau, None, &opts.fit).and_then(|fit| {
                        let restricted = match &hyp {
                            Some(Hypothesis::Composite { constraint }) => Some(restrict::fit_rmdpde_with(
                                &model,
                                &data,
                                tau,
                                constraint,
                                Some(&fit.theta_hat),
                                &opts.fit,
                                opts.hessian,
                            )?),
                            _ => None,
                        };
                        Ok(FitResult {
                            standard_errors: fit.standard_errors(),
                            fit,
                            restricted,
                        })
                    });
                    cell(tau, tau, None, res)
                })
                .collect();
            let p = data.p();
            let mut header = vec!["tau".to_string(), "status".into()];
            header.extend((1..=p).map(|j| format!("beta_{j}")));
            header.extend(["sigma".into(), "objective".into(), "converged".into()]);
            let rows = cells
                .iter()
                .map(|c| {
                    let mut r = vec![c.tau.to_string(), status(c)];
                    match &c.result {
                        Some(f) => {
                            r.extend(f.fit.theta_hat.beta.iter().map(f64::to_string));
                            r.push(f.fit.theta_hat.scale.map_or(String::new(), |s| s.to_string()));
                            r.push(f.fit.objective_value.to_string());
                            r.push(f.fit.converged.to_string());
                        }
                        None => r.extend(std::iter::repeat_n(String::new(), p + 3)),
                    }
                    r
                })
                .collect();
            finish("fit", &data, hyp.as_ref(), &cells, &a.out, header, rows)
        }
        Command::Test(a) => {
            let (model, data) = setup(&a.data)?;
            let hyp = require_hypothesis(&model, data.p(), &a.hyp)?;
            let opts = test_options(&a.tuning)?;
            let cells: Vec<Cell<TestReport>> = tuning_grid(&a.tuning)?
                .iter()
                .map(|t| cell(t.tau, t.gamma, None, dpdtest::dpdts(&model, &data, &hyp, t, &opts)))
                .collect();
            let header = ["tau", "gamma", "status", "statistic", "critical_value", "p_value", "rejects", "method"];
            let rows = cells
                .iter()
                .map(|c| {
                    let mut r = vec![c.tau.to_string(), c.gamma.to_string(), status(c)];
                    match &c.result {
                        Some(t) => r.extend([
                            t.statistic.to_string(),
                            t.critical_value.to_string(),
                            t.p_value.to_string(),
                            t.rejects().to_string(),
                            serde_json::to_value(t.method)?.as_str().unwrap_or_default().to_string(),
                        ]),
                        None => r.extend(std::iter::repeat_n(String::new(), 5)),
                    }
                    Ok(r)
                })
                .collect::<Result<_>>()?;
            finish("test", &data, Some(&hyp), &cells, &a.out, strings(&header), rows)
        }
        Command::Power(a) => {
            let (model, data) = setup(&a.data)?;
            let hyp = require_hypothesis(&model, data.p(), &a.hyp)?;
            let star = alternative(&model, &a.data, &a.alt, data.p())?;
            let generator = CyclicDesign::new(data.design().clone()).map_err(|e| input_error(e.to_string()))?;
            let mut cells: Vec<Cell<PowerApprox>> = Vec::new();
            for t in tuning_grid(&a.tuning)? {
                for &n in &a.n {
                    cells.push(cell(t.tau, t.gamma, Some(n), dpdtest::approx_power(&model, &generator, &hyp, &star, n, &t)));
                }
            }
            let header = ["tau", "gamma", "n", "status", "power", "divergence_sum", "sigma", "critical_value", "degenerate"];
            let rows = cells
                .iter()
                .map(|c| {
                    let mut r = vec![c.tau.to_string(), c.gamma.to_string(), c.n.unwrap_or(0).to_string(), status(c)];
                    match &c.result {
                        Some(p) => r.extend([
                            p.power.to_string(),
                            p.divergence_sum.to_string(),
                            p.sigma.to_string(),
                            p.critical_value.to_string(),
                            p.degenerate.to_string(),
                        ]),
                        None => r.extend(std::iter::repeat_n(String::new(), 5)),
                    }
                    r
                })
                .collect();
            finish("power", &data, Some(&hyp), &cells, &a.out, strings(&header), rows)
        }
        Command::Samplesize(a) => {
            let (model, data) = setup(&a.data)?;
            let hyp = require_hypothesis(&model, data.p(), &a.hyp)?;
            let star = alternative(&model, &a.data, &a.alt, data.p())?;
            let generator = CyclicDesign::new(data.design().clone()).map_err(|e| input_error(e.to_string()))?;
            let cells: Vec<Cell<SampleSize>> = tuning_grid(&a.tuning)?
                .iter()
                .map(|t| cell(t.tau, t.gamma, None, dpdtest::required_sample_size(&model, &generator, &hyp, &star, a.target, t)))
                .collect();
            let header = ["tau", "gamma", "status", "n", "power"];
            let rows = cells
                .iter()
                .map(|c| {
                    let mut r = vec![c.tau.to_string(), c.gamma.to_string(), status(c)];
                    match &c.result {
                        Some(s) => r.extend([s.n.to_string(), s.power.to_string()]),
                        None => r.extend(std::iter::repeat_n(String::new(), 2)),
                    }
                    r
                })
                .collect();
            finish("samplesize", &data, Some(&hyp), &cells, &a.out, strings(&header), rows)
        }
        Command::Influence(a) => {
            let (model, data) = setup(&a.data)?;
            let hyp = require_hypothesis(&model, data.p(), &a.hyp)?;
            if a.row == 0 || a.row > data.n() {
                bail!(input_error(format!("--row must lie in 1..={}", data.n())));
            }
            let i0 = a.row - 1;
            let opts = test_options(&a.tuning)?;
            let cells: Vec<Cell<InfluenceResult>> = tuning_grid(&a.tuning)?
                .iter()
                .map(|t| cell(t.tau, t.gamma, None, influence_cell(&model, &data, &hyp, t, &opts, i0, a)))
                .collect();
            let header = ["tau", "gamma", "status", "offset", "t", "if2"];
            let mut rows = Vec::new();
            for c in &cells {
                match &c.result {
                    Some(r) => {
                        for k in 0..r.if2.offsets.len() {
                            rows.push(vec![
                                c.tau.to_string(),
                                c.gamma.to_string(),
                                status(c),
                                r.if2.offsets[k].to_string(),
                                r.if2.points[k].to_string(),
                                r.if2.values[k].to_string(),
                            ]);
                        }
                    }
                    None => rows.push(vec![c.tau.to_string(), c.gamma.to_string(), status(c), String::new(), String::new(), String::new()]),
                }
            }
            finish("influence", &data, Some(&hyp), &cells, &a.out, strings(&header), rows)
        }
        Command::Simulate(a) => {
            let mut scenario: Scenario = match &a.scenario {
                Some(p) => input::read_json(p)?,
                None => simharness::default_scenario(),
            };
            if let Some(r) = a.replicates {
                scenario.replicates = r;
            }
            if let Some(s) = a.seed {
                scenario.base_seed = s;
            }
            scenario.validate().map_err(|e| input_error(e.to_string()))?;
            let res = simharness::run_size_power(&scenario)?;
            write_json(&res, a.out.output.as_deref())?;
            if let Some(path) = &a.out.csv {
                let header = ["tau", "gamma", "n", "rate", "se", "rejections", "replicates", "failures", "flagged"];
                let rows = res
                    .cells
                    .iter()
                    .map(|c| {
                        vec![
                            c.tau.to_string(),
                            c.gamma.to_string(),
                            c.n.to_string(),
                            c.rate.to_string(),
                            c.se.to_string(),
                            c.rejections.to_string(),
                            c.replicates.to_string(),
                            c.failures.to_string(),
                            c.flagged.to_string(),
                        ]
                    })
                    .collect();
                write_csv(path, &strings(&header), rows)?;
            }
            Ok(())
        }
        Command::Diagnostics(a) => {
            let (_, data) = setup(&a.data)?;
            let diag = design_diagnostics(data.design());
            write_json(&diag, a.out.output.as_deref())?;
            if diag.rank_deficient {
                eprintln!("warning: design has numerical rank {} < {} columns", diag.rank, diag.p);
                if a.strict {
                    diag.require_full_rank()?;
                }
            }
            Ok(())
        }
    }
}

fn influence_cell(
    model: &Model,
    data: &Dataset,
    hyp: &Hypothesis,
    t: &Tuning,
    opts: &TestOptions,
    i0: usize,
    a: &crate::InfluenceArgs,
) -> dpd_core::Result<InfluenceResult> {
    let x = data.design();
    let theta0 = match hyp {
        Hypothesis::Simple { theta0 } => theta0.clone(),
        Hypothesis::Composite { constraint } => {
            restrict::fit_rmdpde_with(model, data, t.tau, constraint, None, &opts.fit, opts.hessian)?.theta_tilde
        }
    };
    let if2 = influence::scan_grid(model, x, &theta0, i0, a.half_width, a.points, |tv| {
        influence::if2_test(model, x, hyp, Some(&theta0), t, &ContaminationSpec::single(i0, tv))
    })?;
    let power_influence = match &a.delta {
        Some(d) => {
            let spec = ContaminationSpec::single(i0, if2.points[if2.offsets.iter().position(|o| *o == if2.argmax).unwrap_or(0)]);
            Some(influence::pif_lif(model, x, hyp, Some(&theta0), &DVector::from_column_slice(d), &spec, t)?)
        }
        None => None,
    };
    Ok(InfluenceResult {
        theta0,
        row: i0 + 1,
        if2,
        power_influence,
    })
}

fn setup(d: &DataArgs) -> Result<(Model, Dataset)> {
    let model = match (d.family, d.sigma) {
        (FamilyArg::Normal, None) => Model::normal(),
        (FamilyArg::Normal, Some(s)) if s > 0.0 && s.is_finite() => Model::normal_known_scale(s),
        (FamilyArg::Normal, Some(s)) => bail!(input_error(format!("--sigma must be positive, got {s}"))),
        (_, Some(_)) => bail!(input_error("--sigma applies to the normal family only")),
        (FamilyArg::Poisson, None) => Model::poisson(),
        (FamilyArg::Bernoulli, None) => Model::bernoulli(),
    };
    if d.drop_rows.contains(&0) {
        bail!(input_error("--drop-rows takes 1-based row numbers"));
    }
    let data = input::load_dataset(d.data.as_deref(), d.salinity, d.response.as_deref(), !d.no_intercept, &d.drop_rows)?;
    model.check_responses(&data).map_err(|e| input_error(e.to_string()))?;
    Ok((model, data))
}

fn hypothesis(model: &Model, p: usize, h: &HypothesisArgs) -> Result<Option<Hypothesis>> {
    let hyp = match (&h.beta0, &h.l_rows) {
        (None, None) => return Ok(None),
        (Some(b), _) => {
            let beta0 = DVector::from_column_slice(b);
            match (model.scale, h.sigma0, h.null_sigma) {
                (ScaleRole::Free, Some(s), _) => Hypothesis::Simple {
                    theta0: ParamVector::new(beta0, Some(s)),
                },
                (ScaleRole::Free, None, role) => Hypothesis::Composite {
                    constraint: LinearConstraint::pin_beta(&beta0, role.map_or(ScaleRole::Free, ScaleRole::Fixed))
                        .map_err(|e| input_error(e.to_string()))?,
                },
                (_, Some(_), _) => bail!(input_error("--sigma0 needs an estimated σ (omit --sigma)")),
                (_, None, _) => Hypothesis::Simple {
                    theta0: ParamVector::new(beta0, None),
                },
            }
        }
        (None, Some(text)) => {
            let rows = input::parse_matrix(text).map_err(|e| input_error(format!("--l-rows: {e}")))?;
            let l0 = h.l0.clone().ok_or_else(|| input_error("--l-rows needs --l0"))?;
            if rows.iter().any(|r| r.len() != p) {
                bail!(input_error(format!("every --l-rows row needs {p} entries")));
            }
            let l = DMatrix::from_fn(p, rows.len(), |i, k| rows[k][i]);
            let role = match (h.null_sigma, model.scale) {
                (Some(s), ScaleRole::Free) => ScaleRole::Fixed(s),
                (Some(_), _) => bail!(input_error("--null-sigma needs an estimated σ")),
                (None, ScaleRole::Free) => ScaleRole::Free,
                (None, other) => other,
            };
            Hypothesis::Composite {
                constraint: LinearConstraint::new(l, DVector::from_vec(l0), role).map_err(|e| input_error(e.to_string()))?,
            }
        }
    };
    hyp.validate(model, p).map_err(|e| input_error(e.to_string()))?;
    Ok(Some(hyp))
}

fn require_hypothesis(model: &Model, p: usize, h: &HypothesisArgs) -> Result<Hypothesis> {
    hypothesis(model, p, h)?.ok_or_else(|| input_error("a hypothesis is required: give --beta0 or --l-rows/--l0"))
}

fn alternative(model: &Model, d: &DataArgs, a: &AlternativeArgs, p: usize) -> Result<ParamVector> {
    let scale = match model.scale {
        ScaleRole::Free => Some(a.sigma_star.or(d.sigma).unwrap_or(1.0)),
        _ => None,
    };
    let theta = ParamVector::new(DVector::from_column_slice(&a.beta_star), scale);
    model.validate_param(&theta, p).map_err(|e| input_error(e.to_string()))?;
    Ok(theta)
}

fn tuning_grid(t: &TuningArgs) -> Result<Vec<Tuning>> {
    let taus = t.tau.clone();
    let gammas = t.gamma.clone();
    if taus.is_empty() || gammas.as_ref().is_some_and(Vec::is_empty) {
        bail!(input_error("tuning grids must be non-empty"));
    }
    let pairs: Vec<(f64, f64)> = match gammas {
        None => taus.iter().map(|&x| (x, x)).collect(),
        Some(g) => taus.iter().flat_map(|&x| g.iter().map(move |&y| (x, y))).collect(),
    };
    pairs
        .into_iter()
        .map(|(tau, gamma)| Tuning::new(tau, gamma, t.alpha).map_err(|e| input_error(e.to_string())))
        .collect()
}

fn test_options(t: &TuningArgs) -> Result<TestOptions> {
    let mut series = SeriesControl::default();
    if let Some(k) = t.series_terms {
        series.max_terms = k;
    }
    if let Some(e) = t.series_tol {
        if !(e > 0.0) {
            bail!(input_error("--series-tol must be positive"));
        }
        series.target_error = e;
    }
    Ok(TestOptions {
        fit: FitOptions {
            restarts: t.restarts,
            seed: t.seed,
            ..FitOptions::default()
        },
        hessian: if t.observed_hessian { HessianMode::Observed } else { HessianMode::Expected },
        series,
        method: if t.generic { MethodChoice::Generic } else { MethodChoice::Auto },
    })
}

fn cell<T>(tau: f64, gamma: f64, n: Option<usize>, res: dpd_core::Result<T>) -> Cell<T> {
    match res {
        Ok(r) => Cell {
            tau,
            gamma,
            n,
            status: Status::Ok,
            error: None,
            result: Some(r),
        },
        Err(e) => Cell {
            tau,
            gamma,
            n,
            status: Status::Failed,
            error: Some(e.to_string()),
            result: None,
        },
    }
}

fn status<T>(c: &Cell<T>) -> String {
    match c.status {
        Status::Ok => "ok".into(),
        Status::Failed => "failed".into(),
    }
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

/// Writes the JSON document and CSV table; fails when every cell failed.
fn finish<T: Serialize>(
    command: &str,
    data: &Dataset,
    hyp: Option<&Hypothesis>,
    cells: &[Cell<T>],
    out: &OutputArgs,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
) -> Result<()> {
    let doc = Document {
        command,
        n_obs: data.n(),
        p: data.p(),
        hypothesis: hyp,
        cells,
    };
    write_json(&doc, out.output.as_deref())?;
    if let Some(path) = &out.csv {
        write_csv(path, &header, rows)?;
    }
    for c in cells {
        if let Some(e) = &c.error {
            eprintln!("warning: cell tau={} gamma={} failed: {e}", c.tau, c.gamma);
        }
    }
    if cells.iter().all(|c| c.status == Status::Failed) {
        bail!(DpdError::NonConvergence(format!("all {} grid cells failed", cells.len())));
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

fn write_csv(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}
