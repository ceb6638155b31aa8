//! Dispatch from a config to the library experiments, plus the gates.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use wz_core::estimators::{
    coupled_error_experiment, driver_moment_check, exact_linear_variance, lg_stable_bound,
    milstein_residual_experiment, orthogonality_check, rate_fit, uniform_moments_experiment,
    unstable_bounds, CoupledConfig, Estimate, RateFit, ResidualConfig,
};
use wz_core::models::default_box;
use wz_core::wzint::{remainder_experiment, DiscountedKernel, RemainderConfig};
use wz_core::{certify, DriverKind, SdeModel, TimeMesh};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{config_hash, num, opt, vector, write_tables, Gate, RunManifest, Table};

/// Relative slack on the deterministic linear bounds.
pub const LINEAR_SLACK: f64 = 1e-10;

/// Everything an experiment produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub gates: Vec<Gate>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Runs the experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.experiment == Experiment::DriversCheck {
        return drivers_check(cfg).with_context(|| format!("experiment `{}`", cfg.experiment));
    }
    let model = cfg.model.as_ref().context("no model configured")?.build()?;
    let model = model.as_ref();
    let out = match cfg.experiment {
        Experiment::DriversCheck => unreachable!(),
        Experiment::SpectralCert => spectral_cert(cfg, model),
        Experiment::LinearExact => linear_exact(cfg),
        Experiment::CoupledError => coupled_error(cfg, model),
        Experiment::Rates => rates(cfg, model),
        Experiment::MilsteinResidual => milstein_residual(cfg, model),
        Experiment::Orthogonality => orthogonality(cfg, model),
        Experiment::WzIntegral => wz_integral(cfg, model),
        Experiment::MomentsUniform => moments_uniform(cfg, model),
    };
    out.with_context(|| format!("experiment `{}` on {}", cfg.experiment, model.id()))
}

/// Runs the experiment and writes its CSVs and manifest into `out_dir`.
pub fn run(cfg: &ExperimentConfig, config_text: &str, out_dir: &Path) -> Result<(RunManifest, Outcome)> {
    let start = Instant::now();
    let outcome = execute(cfg)?;
    let hash = config_hash(cfg);
    let outputs = write_tables(&outcome.tables, out_dir, &hash)?;
    let manifest = RunManifest {
        experiment: cfg.experiment.to_string(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: hash,
        config: cfg.clone(),
        config_text: config_text.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        gates: outcome.gates.clone(),
        passed: outcome.passed(),
    };
    manifest.write(out_dir)?;
    Ok((manifest, outcome))
}

fn sqrt_estimate(e: Estimate) -> Estimate {
    let m = e.mean.max(0.0).sqrt();
    Estimate { mean: m, se: if m > 0.0 { e.se / (2.0 * m) } else { 0.0 } }
}

fn in_window(x: f64, w: Option<(f64, f64)>) -> bool {
    w.is_none_or(|(lo, hi)| x >= lo && x <= hi)
}

fn window_text(w: Option<(f64, f64)>) -> String {
    w.map(|(lo, hi)| format!("[{lo}, {hi}]")).unwrap_or_else(|| "none".into())
}

fn drivers_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let eps = cfg.eps_list[0];
    let mesh = TimeMesh::new(cfg.horizon, eps, cfg.m)?;
    let rows = driver_moment_check(cfg.driver, &mesh, &cfg.times, cfg.paths, cfg.seed)?;
    let mut t = Table::new(
        "driver_moments",
        "t in time units; moments of B - Bbar in (time units)^(order/2)",
        &["driver", "t", "order", "mc", "se", "exact", "allowance", "pass"],
    );
    let mut gates = Vec::new();
    for r in rows.iter().filter(|r| cfg.moments.contains(&r.order)) {
        let pass = r.passes(cfg.se_gate);
        t.push(vec![
            r.kind.to_string(),
            num(r.t),
            r.order.to_string(),
            num(r.mc.mean),
            num(r.mc.se),
            num(r.exact),
            num(r.allowance),
            pass.to_string(),
        ]);
        gates.push(Gate::new(
            format!("E(B-Bbar)^{} at t={}", r.order, r.t),
            pass,
            format!("mc {} se {} exact {} allowance {}", r.mc.mean, r.mc.se, r.exact, r.allowance),
        ));
    }
    Ok(Outcome { tables: vec![t], gates })
}

fn spectral_cert(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let r = model.state_dim();
    let bounds = cfg.cert_box.clone().unwrap_or_else(|| default_box(r));
    let grid_n = cfg.grid.unwrap_or_else(|| wz_core::estimators::default_grid_n(r));
    let mut t = Table::new(
        "spectral_cert",
        "sup_value and lambda in 1/time units",
        &["condition", "sup_value", "lambda", "arg_point", "box", "grid_n"],
    );
    let mut gates = Vec::new();
    for &c in &cfg.conditions {
        let rep = certify(model, c, &bounds, grid_n)?;
        let box_text: Vec<String> = rep.bounds.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
        t.push(vec![
            c.to_string(),
            num(rep.sup_value),
            opt(rep.lambda),
            vector(&rep.arg_point),
            box_text.join(";"),
            rep.grid_n.to_string(),
        ]);
        gates.push(Gate::new(
            format!("{c} holds"),
            rep.holds(),
            format!("sup {} at {:?}", rep.sup_value, rep.arg_point),
        ));
    }
    Ok(Outcome { tables: vec![t], gates })
}

fn linear_a(cfg: &ExperimentConfig) -> Option<f64> {
    cfg.model.as_ref().filter(|m| m.name == "linear1d").map(|m| m.params[0])
}

fn linear_exact(cfg: &ExperimentConfig) -> Result<Outcome> {
    let a = linear_a(cfg).context("linear-exact needs linear1d")?;
    let mut t = Table::new(
        "linear_exact",
        "t_n in time units; variances in (state units)^2",
        &["eps", "n", "t_n", "exact_variance", "lower_bound", "upper_bound"],
    );
    let mut gates = Vec::new();
    for &eps in &cfg.eps_list {
        let mesh = TimeMesh::new(cfg.horizon, eps, 1)?;
        let mut worst_ok = true;
        let mut worst = String::new();
        let stable = if a < 0.0 { Some(lg_stable_bound(a, eps)?) } else { None };
        for n in 0..=mesh.coarse_cells() as i64 {
            let v = exact_linear_variance(a, eps, n)?;
            let (lo, hi, ok) = if a > 0.0 {
                let (lo, hi) = unstable_bounds(a, eps, n)?;
                (Some(lo), Some(hi), v >= lo * (1.0 - LINEAR_SLACK) && v <= hi * (1.0 + LINEAR_SLACK))
            } else if let Some(b) = stable {
                (None, Some(b), v <= b * (1.0 + LINEAR_SLACK))
            } else {
                (None, None, v == 0.0)
            };
            if !ok && worst_ok {
                worst_ok = false;
                worst = format!("first violation at n={n}: {v} not in [{}, {}]", opt(lo), opt(hi));
            }
            t.push(vec![num(eps), n.to_string(), num(mesh.coarse_time(n as usize)), num(v), opt(lo), opt(hi)]);
        }
        let what = if a > 0.0 { "growth sandwich" } else { "uniform bound" };
        gates.push(Gate::new(
            format!("{what} at eps={eps}"),
            worst_ok,
            if worst_ok { "all rows inside".to_string() } else { worst },
        ));
    }
    Ok(Outcome { tables: vec![t], gates })
}

fn coupled_config(cfg: &ExperimentConfig, eps: f64) -> CoupledConfig {
    let mut c = CoupledConfig::new(cfg.driver, eps, cfg.horizon, cfg.m, cfg.x0_panel.clone(), cfg.paths, cfg.seed);
    c.substeps = cfg.substeps;
    c.obs_per_cell = cfg.obs_per_cell;
    c.fourth_moment = cfg.moments.contains(&4);
    c.cert_bounds = cfg.cert_box.clone();
    c.cert_grid_n = cfg.grid;
    c
}

/// Closed-form gap and bound at coarse node `n` when the model has them.
fn linear_oracle(cfg: &ExperimentConfig, eps: f64, n: usize) -> (Option<f64>, Option<f64>) {
    match linear_a(cfg) {
        Some(a) if cfg.driver == DriverKind::Polygonal => {
            let exact = exact_linear_variance(a, eps, n as i64).ok();
            let bound = if a < 0.0 {
                lg_stable_bound(a, eps).ok()
            } else if a > 0.0 {
                unstable_bounds(a, eps, n as i64).ok().map(|b| b.1)
            } else {
                None
            };
            (exact, bound)
        }
        _ => (None, None),
    }
}

fn coupled_error(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let mut t = Table::new(
        "coupled_error",
        "t_n in time units; l2_gap = E|X - Xbar|^2 in (state units)^2",
        &[
            "eps", "x0", "j", "n", "t_n", "l2_gap", "se", "l4_gap", "l4_se", "mean_gap", "exact_oracle",
            "bound_value",
        ],
    );
    let mut gates = Vec::new();
    for &eps in &cfg.eps_list {
        let reports = coupled_error_experiment(model, &coupled_config(cfg, eps))?;
        for rep in &reports {
            let mut misses = Vec::new();
            let mut checked = 0usize;
            for node in &rep.nodes {
                let n = node.coarse.then(|| node.fine_index / cfg.m);
                let (exact, bound) = n.map(|n| linear_oracle(cfg, eps, n)).unwrap_or((None, None));
                if let Some(e) = exact {
                    checked += 1;
                    if !node.l2.within(e, cfg.se_gate) {
                        misses.push(format!("t={} mc {} se {} exact {e}", node.t, node.l2.mean, node.l2.se));
                    }
                }
                t.push(vec![
                    num(eps),
                    vector(&rep.x0),
                    node.fine_index.to_string(),
                    n.map(|n| n.to_string()).unwrap_or_default(),
                    num(node.t),
                    num(node.l2.mean),
                    num(node.l2.se),
                    opt(node.l4.map(|e| e.mean)),
                    opt(node.l4.map(|e| e.se)),
                    num(node.mean_gap.mean),
                    opt(exact),
                    opt(bound),
                ]);
            }
            if checked > 0 {
                gates.push(Gate::new(
                    format!("oracle within {} SE at eps={eps}, x0={}", cfg.se_gate, vector(&rep.x0)),
                    misses.is_empty(),
                    if misses.is_empty() {
                        format!("{checked} coarse nodes checked")
                    } else {
                        format!("{} of {checked} nodes off; first: {}", misses.len(), misses[0])
                    },
                ));
            }
        }
    }
    Ok(Outcome { tables: vec![t], gates })
}

fn fit_cells(fit: &Option<RateFit>) -> (String, String) {
    match fit {
        Some(f) => (num(f.slope), num(2.0 * f.slope_se)),
        None => (String::new(), String::new()),
    }
}

fn rates(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let mut sups: Vec<Vec<(Estimate, Estimate)>> = vec![Vec::new(); cfg.x0_panel.len()];
    let mut cert = None;
    for &eps in &cfg.eps_list {
        let reports = coupled_error_experiment(model, &coupled_config(cfg, eps))?;
        for (k, rep) in reports.iter().enumerate() {
            sups[k].push((sqrt_estimate(rep.sup_l2().l2), sqrt_estimate(rep.sup_l2_coarse().l2)));
        }
        cert.get_or_insert_with(|| reports[0].certificate.clone());
    }
    let mut t = Table::new(
        "rates",
        "eps in time units; err = sup_n sqrt(E|X - Xbar|^2) in state units; slope dimensionless",
        &["x0", "nodes", "eps", "err", "se", "slope", "slope_ci"],
    );
    let mut gates = Vec::new();
    for (x0, s) in cfg.x0_panel.iter().zip(&sups) {
        for (label, pick) in [("observed", 0usize), ("coarse", 1)] {
            if pick == 1 && cfg.obs_per_cell == 1 {
                continue;
            }
            let est: Vec<Estimate> = s.iter().map(|p| if pick == 0 { p.0 } else { p.1 }).collect();
            let errs: Vec<f64> = est.iter().map(|e| e.mean).collect();
            let fit = rate_fit(&cfg.eps_list, &errs).ok();
            let (slope, ci) = fit_cells(&fit);
            for (eps, e) in cfg.eps_list.iter().zip(&est) {
                t.push(vec![vector(x0), label.into(), num(*eps), num(e.mean), num(e.se), slope.clone(), ci.clone()]);
            }
            if pick == 0 {
                let ok = fit.as_ref().is_some_and(|f| in_window(f.slope, cfg.slope_window));
                gates.push(Gate::new(
                    format!("slope in {} for x0={}", window_text(cfg.slope_window), vector(x0)),
                    ok,
                    format!("slope {slope} +- {ci}"),
                ));
            }
        }
    }
    let mut tables = vec![t];
    if let Some(c) = cert {
        tables.push(certificate_table(&c));
    }
    Ok(Outcome { tables, gates })
}

fn certificate_table(c: &wz_core::CertReport) -> Table {
    let mut t = Table::new(
        "certificate",
        "sup_value and lambda in 1/time units",
        &["condition", "sup_value", "lambda", "arg_point", "grid_n"],
    );
    t.push(vec![c.condition.to_string(), num(c.sup_value), opt(c.lambda), vector(&c.arg_point), c.grid_n.to_string()]);
    t
}

fn residual_config(cfg: &ExperimentConfig) -> ResidualConfig {
    ResidualConfig {
        horizon: cfg.horizon,
        refine: cfg.m,
        substeps: cfg.substeps,
        x0: cfg.x0_panel[0].clone(),
        paths: cfg.paths,
        seed: cfg.seed,
    }
}

fn milstein_residual(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let rep = milstein_residual_experiment(model, &cfg.eps_list, &residual_config(cfg))?;
    let mut t = Table::new(
        "milstein_residual",
        "eps in time units; residual norms in state units",
        &[
            "eps", "x_l2", "x_l2_se", "xbar_l2", "xbar_l2_se", "x_mean", "x_mean_se", "xbar_mean", "x_projected_rms",
            "samples",
        ],
    );
    for r in &rep.rows {
        let x = sqrt_estimate(r.x_sq);
        let xb = sqrt_estimate(r.xbar_sq);
        t.push(vec![
            num(r.eps),
            num(x.mean),
            num(x.se),
            num(xb.mean),
            num(xb.se),
            num(r.x_mean.mean),
            num(r.x_mean.se),
            num(r.xbar_mean.mean),
            num(r.x_projected_rms),
            r.samples.to_string(),
        ]);
    }
    let mut fits = Table::new("residual_rates", "slopes dimensionless", &["quantity", "slope", "slope_ci"]);
    for (name, f) in [
        ("x_l2", &rep.x_fit),
        ("xbar_l2", &rep.xbar_fit),
        ("x_mean", &rep.x_mean_fit),
        ("x_projected", &rep.x_projected_fit),
    ] {
        let (s, ci) = fit_cells(f);
        fits.push(vec![name.into(), s, ci]);
    }
    let xbar = rep.xbar_fit.as_ref().map(|f| f.slope);
    let mean = rep.x_mean_fit.as_ref().map(|f| f.slope);
    let gates = vec![
        Gate::new(
            format!("xbar residual slope in {}", window_text(cfg.slope_window)),
            xbar.is_some_and(|s| in_window(s, cfg.slope_window)),
            format!("slope {}", opt(xbar)),
        ),
        Gate::new(
            format!("mean residual slope >= {}", cfg.mean_slope_min),
            mean.is_some_and(|s| s >= cfg.mean_slope_min),
            format!("slope {}", opt(mean)),
        ),
    ];
    Ok(Outcome { tables: vec![t, fits], gates })
}

/// Entries whose size is gated.
pub const GATED_ENTRIES: [&str; 2] = ["E[chi dM]", "E[chi^2 dM]"];

fn orthogonality(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let rc = residual_config(cfg);
    let mut eps_sorted = cfg.eps_list.clone();
    eps_sorted.sort_by(|a, b| b.total_cmp(a));
    let tables_by_eps = eps_sorted
        .iter()
        .map(|&e| orthogonality_check(model, e, &rc))
        .collect::<wz_core::Result<Vec<_>>>()?;
    let fit_eps = eps_sorted[0];
    let fit_table = &tables_by_eps[0];
    let single = tables_by_eps.len() == 1;
    let mut t = Table::new(
        "orthogonality",
        "eps in time units; entries in state units",
        &["eps", "entry", "value", "se", "c", "tolerance", "pass"],
    );
    let mut gates = Vec::new();
    for tab in &tables_by_eps {
        for entry in &tab.entries {
            let gated = GATED_ENTRIES.contains(&entry.name.as_str());
            let c = if single {
                0.0
            } else {
                fit_table.get(&entry.name).map(|e| e.mean.abs() / fit_eps.sqrt()).unwrap_or(0.0)
            };
            let tol = cfg.se_gate * entry.value.se + c * tab.eps.sqrt();
            let at_fit = !single && tab.eps == fit_eps;
            let pass = entry.value.mean.abs() <= tol;
            let show = gated && !at_fit;
            t.push(vec![
                num(tab.eps),
                entry.name.clone(),
                num(entry.value.mean),
                num(entry.value.se),
                num(c),
                num(tol),
                if show { pass.to_string() } else { String::new() },
            ]);
            if show {
                gates.push(Gate::new(
                    format!("|{}| <= {} SE + c sqrt(eps) at eps={}", entry.name, cfg.se_gate, tab.eps),
                    pass,
                    format!("value {} se {} c {c} tolerance {tol}", entry.value.mean, entry.value.se),
                ));
            }
        }
    }
    Ok(Outcome { tables: vec![t], gates })
}

fn wz_integral(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let rc = RemainderConfig {
        kernel: DiscountedKernel::new(cfg.lambda, cfg.kernel)?,
        eps_list: cfg.eps_list.clone(),
        t_list: cfg.t_list.clone(),
        x0: cfg.x0_panel[0][0],
        paths: cfg.paths,
        refine: cfg.m,
        substeps: cfg.substeps,
        seed: cfg.seed,
        source: cfg.source,
    };
    let rep = remainder_experiment(model, &rc)?;
    let mut t = Table::new(
        "wz_integral",
        "eps and t in time units; l2_remainder in state units",
        &["eps", "t", "l2_remainder", "se", "mean_remainder", "bound_envelope", "e_lambda_t"],
    );
    for r in &rep.rows {
        t.push(vec![
            num(r.eps),
            num(r.t),
            num(r.l2()),
            num(r.l2_se()),
            num(r.mean.mean),
            num(r.bound_envelope),
            num(r.e_lambda_t),
        ]);
    }
    let mut fits = Table::new("wz_integral_rates", "t in time units; slope dimensionless", &["t", "slope", "slope_ci"]);
    let mut gates = Vec::new();
    for (tt, f) in &rep.fits {
        fits.push(vec![num(*tt), num(f.slope), num(2.0 * f.slope_se)]);
        if cfg.slope_window.is_some() {
            gates.push(Gate::new(
                format!("remainder slope in {} at t={tt}", window_text(cfg.slope_window)),
                in_window(f.slope, cfg.slope_window),
                format!("slope {} +- {}", f.slope, 2.0 * f.slope_se),
            ));
        }
    }
    let mut ts = cfg.t_list.clone();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if cfg.lambda > 0.0 && ts.len() >= 2 {
        let (t_lo, t_hi) = (ts[ts.len() - 2], ts[ts.len() - 1]);
        for &eps in &cfg.eps_list {
            let (Some(a), Some(b)) = (rep.row(eps, t_lo), rep.row(eps, t_hi)) else { continue };
            let change = b.l2() / a.l2() - 1.0;
            gates.push(Gate::new(
                format!("plateau t={t_hi} vs t={t_lo} at eps={eps}"),
                change.abs() <= cfg.plateau_tol,
                format!("relative change {change} (tolerance {})", cfg.plateau_tol),
            ));
        }
    }
    Ok(Outcome { tables: vec![t, fits, certificate_table(&rep.certificate)], gates })
}

fn moments_uniform(cfg: &ExperimentConfig, model: &dyn SdeModel) -> Result<Outcome> {
    let mut t = Table::new(
        "moments",
        "t_n in time units; moment = E|Xbar|^p in (state units)^p",
        &["eps", "x0", "p", "n", "t_n", "moment", "se"],
    );
    let mut g = Table::new(
        "moments_growth",
        "moments in (state units)^p; growth dimensionless",
        &["eps", "x0", "p", "sup_half", "sup_full", "growth"],
    );
    let mut gates = Vec::new();
    for &eps in &cfg.eps_list {
        let mesh = TimeMesh::new(cfg.horizon, eps, cfg.m)?;
        for &p in &cfg.moments {
            let reps =
                uniform_moments_experiment(model, cfg.driver, &mesh, cfg.substeps, &cfg.x0_panel, cfg.paths, p, cfg.seed)?;
            for rep in &reps {
                for (n, (tn, e)) in rep.times.iter().zip(&rep.moments).enumerate() {
                    t.push(vec![num(eps), vector(&rep.x0), p.to_string(), n.to_string(), num(*tn), num(e.mean), num(e.se)]);
                }
                let half = rep.sup_until(cfg.horizon / 2.0).1;
                let full = rep.sup_until(cfg.horizon).1;
                let growth = full.mean / half.mean - 1.0;
                g.push(vec![num(eps), vector(&rep.x0), p.to_string(), num(half.mean), num(full.mean), num(growth)]);
                gates.push(Gate::new(
                    format!("E|Xbar|^{p} sup growth T/2 -> T at eps={eps}, x0={}", vector(&rep.x0)),
                    growth <= cfg.growth_tol,
                    format!("sup {} -> {} (growth {growth}, tolerance {})", half.mean, full.mean, cfg.growth_tol),
                ));
            }
        }
    }
    Ok(Outcome { tables: vec![t, g], gates })
}
