//! The subcommands. Each returns an [`Output`] that `main` renders.

use rayon::prelude::*;
use serde_json::{json, Value};
use spectral_distill::federated::{federated_optimum, federated_risk};
use spectral_distill::montecarlo::{converge_harness, EstimatorSpec, SimConfig};
use spectral_distill::optimal::{check_root_structure, optimal_est_rule, optimal_pred_rule, synthesize_sd};
use spectral_distill::shrinkage::{
    limiting_est_risk, limiting_pred_risk, min_norm_surrogate, pcr_outliers, pcr_surrogate, sd_chain_fn,
};
use spectral_distill::spectra::{mp_measure, mp_support, spiked_measure, SpectralMeasure};
use spectral_distill::{Error, ModelContext, RationalRule, RiskBreakdown, SdParams, ShrinkageFn, SpikedModel};

use crate::config::{Family, RunConfig, SimEstimator, SweepParameter};
use crate::output::{Cell, Output, Table};
use crate::CliError;

/// Largest self-check error accepted before the run is reported as a numerical failure.
const SELF_CHECK_LIMIT: f64 = 1e-8;

/// A parsed config with its validated model.
pub struct Run {
    pub cfg: RunConfig,
    pub model: SpikedModel,
    pub nodes: usize,
}

impl Run {
    fn context(&self, model: &SpikedModel) -> Result<ModelContext, CliError> {
        Ok(ModelContext::with_nodes(model, self.nodes)?)
    }
}

fn missing(block: &str, command: &str) -> CliError {
    CliError::Config(format!("the {command} command needs a \"{block}\" block in the config"))
}

pub fn measure(run: &Run) -> Result<Output, CliError> {
    let m = &run.model;
    let points = run.cfg.measure.clone().unwrap_or_default().points;
    if points == 0 {
        return Err(CliError::Config("measure.points must be positive".into()));
    }
    let (a, b) = mp_support(m);
    let mut measures: Vec<(String, SpectralMeasure)> = vec![("mp".into(), mp_measure(m))];
    for (j, sp) in m.spikes().iter().enumerate() {
        measures.push((format!("delta_{}", j + 1), spiked_measure(m, sp.delta)?));
    }
    let mut header = vec!["x".to_string()];
    header.extend(measures.iter().map(|(name, _)| format!("f_{name}")));
    let mut dens = Table::new("density", header);
    for i in 0..points {
        let x = a + (b - a) * (i as f64 + 0.5) / points as f64;
        let mut row = vec![Cell::from(x)];
        row.extend(measures.iter().map(|(_, meas)| Cell::from(meas.bulk_density(x))));
        dens.push(row);
    }
    let mut atoms = Table::new("atoms", vec!["measure".into(), "location".into(), "mass".into()]);
    for (name, meas) in &measures {
        for atom in &meas.atoms {
            atoms.push(vec![name.as_str().into(), atom.location.into(), atom.mass.into()]);
        }
    }
    Ok(Output::Tables(vec![dens, atoms]))
}

fn risk_header(s: usize) -> Vec<String> {
    let mut h = vec!["label".to_string(), "param".to_string()];
    for kind in ["pred", "est"] {
        h.push(format!("{kind}_bias_bulk"));
        h.extend((1..=s).map(|j| format!("{kind}_bias_spike_{j}")));
        h.push(format!("{kind}_variance"));
        h.push(format!("{kind}_total"));
    }
    h
}

fn breakdown_cells(r: &RiskBreakdown) -> Vec<Cell> {
    let mut cells = vec![Cell::from(r.bias_bulk)];
    cells.extend(r.bias_spikes.iter().map(|&v| Cell::from(v)));
    cells.push(r.variance.into());
    cells.push(r.total.into());
    cells
}

fn risk_row(ctx: &ModelContext, label: String, param: Cell, f: &ShrinkageFn) -> Result<Vec<Cell>, CliError> {
    let mut row = vec![Cell::from(label), param];
    row.extend(breakdown_cells(&limiting_pred_risk(ctx, f)?));
    row.extend(breakdown_cells(&limiting_est_risk(ctx, f)?));
    Ok(row)
}

fn rule_kind(f: &ShrinkageFn) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.get("kind").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| "rule".into())
}

pub fn risk(run: &Run) -> Result<Output, CliError> {
    let block = run.cfg.risk.clone().ok_or_else(|| missing("risk", "risk"))?;
    let ctx = run.context(&run.model)?;
    let mut table = Table::new("risk", risk_header(run.model.s()));
    if let Some(family) = &block.family {
        let grid = block.grid.as_ref().ok_or_else(|| CliError::Config("risk.family needs risk.grid".into()))?;
        let values = grid.values().map_err(CliError::Config)?;
        let rows = values
            .par_iter()
            .map(|&v| {
                let (label, f) = match family {
                    Family::Ridge => ("ridge", ShrinkageFn::Ridge { lambda: v }),
                    Family::Pcr => ("pcr", pcr_surrogate(&run.model, v, None)?),
                    Family::GdSteps { eta } => {
                        if !(v >= 1.0 && v.fract() == 0.0) {
                            return Err(CliError::Config(format!("gd step counts must be positive integers, got {v}")));
                        }
                        ("gd", ShrinkageFn::GdPoly { eta: *eta, steps: v as usize })
                    }
                    Family::GdEta { steps } => ("gd", ShrinkageFn::GdPoly { eta: v, steps: *steps }),
                };
                risk_row(&ctx, label.into(), v.into(), &f)
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter().for_each(|r| table.push(r));
    }
    for f in &block.rules {
        table.push(risk_row(&ctx, rule_kind(f), Cell::Empty, f)?);
    }
    if block.include_optimal {
        let (pred, _) = optimal_pred_rule(&ctx)?;
        let est = optimal_est_rule(&ctx)?;
        table.push(risk_row(&ctx, "optimal_pred".into(), Cell::Empty, &pred.to_shrinkage())?);
        table.push(risk_row(&ctx, "optimal_est".into(), Cell::Empty, &est.to_shrinkage())?);
    }
    if table.rows.is_empty() {
        return Err(CliError::Config("risk block selects no rules".into()));
    }
    Ok(Output::Tables(vec![table]))
}

fn rule_json(rule: &RationalRule) -> Value {
    json!({ "roots": rule.roots, "q": rule.q.coeffs(), "gain": rule.gain })
}

fn params_json(p: &SdParams) -> Value {
    json!({ "lambdas": p.lambdas, "xis": p.xis })
}

fn breakdown_json(r: &RiskBreakdown) -> Value {
    json!({ "bias_bulk": r.bias_bulk, "bias_spikes": r.bias_spikes, "variance": r.variance, "total": r.total })
}

/// `sup |f_sd − f|` over the context's support points.
fn round_trip_error(ctx: &ModelContext, params: &SdParams, f: impl Fn(f64) -> f64) -> f64 {
    let sd = sd_chain_fn(params.clone());
    ctx.xs.iter().map(|&x| (sd.eval(x) - f(x)).abs()).fold(0.0, f64::max)
}

fn require_small(name: &str, value: f64) -> Result<(), CliError> {
    if value < SELF_CHECK_LIMIT {
        Ok(())
    } else {
        Err(Error::Numerical(format!("self-check {name} = {value:e} exceeds {SELF_CHECK_LIMIT:e}")).into())
    }
}

pub fn optimal(run: &Run) -> Result<Output, CliError> {
    let ctx = run.context(&run.model)?;
    let (rule, coef) = optimal_pred_rule(&ctx)?;
    check_root_structure(&ctx, &rule)?;
    let syn = synthesize_sd(&rule.normalized())?;
    let est = optimal_est_rule(&ctx)?;
    let est_params = synthesize_sd(&est.normalized())?.params;
    let pred_trip = round_trip_error(&ctx, &syn.params, |x| rule.eval(x) / rule.gain);
    let est_trip = round_trip_error(&ctx, &est_params, |x| est.eval(x) / est.gain);
    require_small("fixed_point_residual", coef.fixed_point_residual)?;
    require_small("round_trip_sup_error", pred_trip)?;
    require_small("estimation_round_trip_sup_error", est_trip)?;
    Ok(Output::Json(json!({
        "b": coef.b,
        "rule": rule_json(&rule),
        "sd_params": params_json(&syn.params),
        "risk": breakdown_json(&limiting_pred_risk(&ctx, &rule.to_shrinkage())?),
        "estimation": {
            "rule": rule_json(&est),
            "sd_params": params_json(&est_params),
            "risk": breakdown_json(&limiting_est_risk(&ctx, &est.to_shrinkage())?),
        },
        "self_check": {
            "fixed_point_residual": coef.fixed_point_residual,
            "round_trip_sup_error": pred_trip,
            "estimation_round_trip_sup_error": est_trip,
            "root_structure": "ok",
        },
    })))
}

fn federated_k(run: &Run) -> Result<usize, CliError> {
    let k = run.cfg.federated.as_ref().ok_or_else(|| missing("federated", "federated"))?.k;
    if k == 0 {
        return Err(CliError::Config("federated.k must be at least 1".into()));
    }
    Ok(k)
}

pub fn federated(run: &Run) -> Result<Output, CliError> {
    let k = federated_k(run)?;
    let ctx = run.context(&run.model)?;
    let fed = federated_optimum(&ctx, k)?;
    let local = fed.local_rule.to_shrinkage();
    let total = federated_risk(&ctx, k, &vec![local; k], &vec![fed.rho_star; k])?;
    let local_trip = round_trip_error(&ctx, &fed.sd_params, |x| fed.local_rule.eval(x));
    let agg_trip = ctx
        .xs
        .iter()
        .map(|&x| (fed.rho_star * fed.local_rule.eval(x) - fed.f_k.eval(x)).abs())
        .fold(0.0, f64::max);
    require_small("round_trip_sup_error", local_trip)?;
    require_small("aggregate_sup_error", agg_trip)?;
    Ok(Output::Json(json!({
        "k": k,
        "b": fed.b,
        "rho_star": fed.rho_star,
        "rule": rule_json(&fed.f_k),
        "local_rule": rule_json(&fed.local_rule),
        "sd_params": params_json(&fed.sd_params),
        "risk": { "total": total },
        "self_check": {
            "round_trip_sup_error": local_trip,
            "aggregate_sup_error": agg_trip,
        },
    })))
}

pub fn sd_params(run: &Run) -> Result<Output, CliError> {
    let ctx = run.context(&run.model)?;
    let (pred, _) = optimal_pred_rule(&ctx)?;
    let est = optimal_est_rule(&ctx)?;
    let mut sets = vec![
        ("pred".to_string(), synthesize_sd(&pred.normalized())?.params),
        ("est".to_string(), synthesize_sd(&est.normalized())?.params),
    ];
    if run.cfg.federated.is_some() {
        let k = federated_k(run)?;
        sets.push((format!("federated_k{k}"), federated_optimum(&ctx, k)?.sd_params));
    }
    let mut table = Table::new("sd_params", vec!["rule".into(), "stage".into(), "lambda".into(), "xi".into()]);
    for (name, p) in &sets {
        for (t, &lambda) in p.lambdas.iter().enumerate() {
            let xi = if t == 0 { Cell::Empty } else { p.xis[t - 1].into() };
            table.push(vec![name.as_str().into(), t.into(), lambda.into(), xi]);
        }
    }
    Ok(Output::Tables(vec![table]))
}

/// Ridge parameter minimising the limiting prediction risk on a 400-point log grid.
fn tuned_ridge(ctx: &ModelContext) -> Result<f64, CliError> {
    let mut best = (f64::INFINITY, f64::NAN);
    for k in 0..400 {
        let lambda = 10f64.powf(-3.0 + 6.0 * k as f64 / 399.0);
        let r = limiting_pred_risk(ctx, &ShrinkageFn::Ridge { lambda })?.total;
        if r < best.0 {
            best = (r, lambda);
        }
    }
    Ok(best.1)
}

/// Harness spec and limiting target for one estimator. The target is NaN
/// when the estimator has no limiting formula (e.g. PCR cutting between outliers).
fn resolve(
    ctx: &ModelContext,
    est: &SimEstimator,
    n: usize,
    p: usize,
) -> Result<(String, EstimatorSpec, f64), CliError> {
    let m = &ctx.model;
    let target = |f: &ShrinkageFn| -> Result<f64, CliError> { Ok(limiting_pred_risk(ctx, f)?.total) };
    let shrink = |rule: ShrinkageFn| EstimatorSpec::Shrinkage { rule };
    Ok(match est {
        SimEstimator::Ridge { lambda } => {
            let f = ShrinkageFn::Ridge { lambda: *lambda };
            (est.label(), shrink(f.clone()), target(&f)?)
        }
        SimEstimator::TunedRidge => {
            let f = ShrinkageFn::Ridge { lambda: tuned_ridge(ctx)? };
            (est.label(), shrink(f.clone()), target(&f)?)
        }
        SimEstimator::OptimalSd => {
            let (rule, _) = optimal_pred_rule(ctx)?;
            let params = synthesize_sd(&rule.normalized())?.params;
            let t = target(&sd_chain_fn(params.clone()))?;
            (est.label(), EstimatorSpec::Sd { params }, t)
        }
        SimEstimator::Sd { params } => {
            let t = target(&sd_chain_fn(params.clone()))?;
            (est.label(), EstimatorSpec::Sd { params: params.clone() }, t)
        }
        SimEstimator::Pcr { m: k } => {
            let outliers = m.spikes().iter().filter(|s| m.above_bbp(s.delta)).count();
            let t = if *k == n.min(p) {
                min_norm_surrogate(m).ok().map(|f| target(&f)).transpose()?
            } else if *k == outliers {
                Some(target(&pcr_outliers(m))?)
            } else if *k > outliers {
                pcr_surrogate(m, *k as f64 / p as f64, None).ok().map(|f| target(&f)).transpose()?
            } else {
                None
            };
            (est.label(), EstimatorSpec::Pcr { m: *k }, t.unwrap_or(f64::NAN))
        }
        SimEstimator::MinNorm => {
            let t = min_norm_surrogate(m).ok().map(|f| target(&f)).transpose()?;
            (est.label(), EstimatorSpec::MinNorm, t.unwrap_or(f64::NAN))
        }
        SimEstimator::Gd { eta, steps } => {
            let t = target(&ShrinkageFn::GdPoly { eta: *eta, steps: *steps })?;
            (est.label(), EstimatorSpec::Gd { eta: *eta, steps: *steps }, t)
        }
        SimEstimator::Rule { rule } => (est.label(), shrink(rule.clone()), target(rule)?),
    })
}

fn sim_config(model: &SpikedModel, n: usize, p: usize, seed: u64, replicates: usize) -> Result<SimConfig, CliError> {
    if n < 2 || p < 2 || replicates == 0 {
        return Err(CliError::Config(format!(
            "simulation needs n >= 2, p >= 2 and at least one replicate, got n={n} p={p} replicates={replicates}"
        )));
    }
    let cfg = SimConfig::new(model.clone(), n, p, seed, replicates);
    for w in cfg.validate().map_err(|e| CliError::Config(e.to_string()))? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

pub fn simulate(run: &Run) -> Result<Output, CliError> {
    let block = run.cfg.simulate.clone().ok_or_else(|| missing("simulate", "simulate"))?;
    if block.estimators.is_empty() {
        return Err(CliError::Config("simulate.estimators is empty".into()));
    }
    let ctx = run.context(&run.model)?;
    let mut cfg = sim_config(&run.model, block.n, block.p, block.seed, block.replicates)?;
    if let Some(d) = block.entry_dist {
        cfg.entry_dist = d;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let specs = block
        .estimators
        .iter()
        .map(|e| resolve(&ctx, e, block.n, block.p))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = converge_harness(&cfg, &specs).map_err(|e| match e {
        Error::Argument(msg) | Error::Domain(msg) => CliError::Config(msg),
        other => other.into(),
    })?;
    let header = ["label", "target", "mean", "std_error", "rel_gap", "replicates"];
    let mut table = Table::new("simulate", header.iter().map(|s| s.to_string()).collect());
    for r in reports {
        table.push(vec![
            r.label.into(),
            r.target.into(),
            r.mean.into(),
            r.std_error.into(),
            r.rel_gap.into(),
            r.risks.len().into(),
        ]);
    }
    Ok(Output::Tables(vec![table]))
}

pub fn sweep(run: &Run) -> Result<Output, CliError> {
    let block = run.cfg.sweep.clone().ok_or_else(|| missing("sweep", "sweep"))?;
    let values = block.grid.values().map_err(CliError::Config)?;
    if block.estimators.is_empty() && !block.optimal_params {
        return Err(CliError::Config("sweep selects neither estimators nor optimal_params".into()));
    }
    let base = &run.model;
    if block.parameter == SweepParameter::Delta && block.spike >= base.s() {
        return Err(CliError::Config(format!("sweep.spike = {} but the model has {} spikes", block.spike, base.s())));
    }
    let s = base.s();
    let label = match block.parameter {
        SweepParameter::Delta => format!("delta_{}", block.spike + 1),
        SweepParameter::SigmaEpsSq => "sigma_eps_sq".into(),
    };
    let mut header = vec![label];
    for e in &block.estimators {
        header.push(format!("{}_limit", e.label()));
        if block.simulate.is_some() {
            header.push(format!("{}_mean", e.label()));
            header.push(format!("{}_stderr", e.label()));
        }
    }
    if block.optimal_params {
        header.push("optimal_limit".into());
        header.extend((0..=s).map(|t| format!("lambda_{t}")));
        header.extend((1..=s).map(|t| format!("xi_{t}")));
        header.extend((1..=s).map(|j| format!("x_star_{j}")));
    }

    let row_for = |v: f64| -> Result<Vec<Cell>, CliError> {
        let m = match block.parameter {
            SweepParameter::Delta => base.with_delta(block.spike, v)?,
            SweepParameter::SigmaEpsSq => base.with_sigma_eps_sq(v)?,
        };
        let ctx = run.context(&m)?;
        let mut row = vec![Cell::from(v)];
        let (n, p) = block.simulate.as_ref().map_or((0, 0), |sim| (sim.n, sim.p));
        let specs = block
            .estimators
            .iter()
            .map(|e| resolve(&ctx, e, n.max(1), p.max(1)))
            .collect::<Result<Vec<_>, _>>()?;
        match &block.simulate {
            Some(sim) => {
                let cfg = sim_config(&m, sim.n, sim.p, sim.seed, sim.replicates)?;
                for r in converge_harness(&cfg, &specs)? {
                    row.extend([r.target.into(), r.mean.into(), r.std_error.into()]);
                }
            }
            None => row.extend(specs.iter().map(|(_, _, t)| Cell::from(*t))),
        }
        if block.optimal_params {
            let (rule, _) = optimal_pred_rule(&ctx)?;
            let params = synthesize_sd(&rule.normalized())?.params;
            row.push(limiting_pred_risk(&ctx, &rule.to_shrinkage())?.total.into());
            row.extend(params.lambdas.iter().map(|&l| Cell::from(l)));
            row.extend(params.xis.iter().map(|&x| Cell::from(x)));
            for (sp, x) in m.spikes().iter().zip(m.outliers()) {
                row.push(if m.above_bbp(sp.delta) { x.into() } else { Cell::Empty });
            }
        }
        Ok(row)
    };
    // Simulated rows parallelise inside the harness; limiting-only rows parallelise here.
    let rows: Vec<Vec<Cell>> = if block.simulate.is_some() {
        values.iter().map(|&v| row_for(v)).collect::<Result<_, _>>()?
    } else {
        values.par_iter().map(|&v| row_for(v)).collect::<Result<_, _>>()?
    };
    let mut table = Table::new("sweep", header);
    rows.into_iter().for_each(|r| table.push(r));
    Ok(Output::Tables(vec![table]))
}
