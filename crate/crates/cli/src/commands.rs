use std::collections::BTreeMap;
use std::time::Instant;

use heavytail_core::excursion::{detect_excursions, simulate_cycles, tau_statistics};
use heavytail_core::instanton::{
    fit_exponential_tail, grid_refinement_check, rate_function, solve_on_grid, ExtrapolationModel, GridRule,
    RatePrefactor, MONOTONE_TOL,
};
use heavytail_core::mc::{calibrate_threshold, rate_convergence_fit, sample_time_averages, simulation_grid, tail_from_samples};
use heavytail_core::ou::{sample_path, time_average};
use heavytail_core::rng::derive_seed;
use heavytail_core::stats::summarize;
use heavytail_core::validation::{CriterionOutcome, ValidationPlan, Validator};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, RunConfig};
use crate::output::{num, OutputDir, Table};
use crate::CliError;

// sub-seed tags, one per experiment
const TAG_SIMULATE: u64 = 1;
const TAG_EXCURSION_PATHS: u64 = 2;
const TAG_EXCURSION_CYCLES: u64 = 3;
const TAG_TAILS: u64 = 4;
const TAG_TAILS_PILOT: u64 = 5;

pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    let experiment = cfg.experiment.unwrap_or(Experiment::Validate);
    let start = Instant::now();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let result = match experiment {
        Experiment::Simulate => simulate(cfg, &mut out),
        Experiment::Excursions => excursions(cfg, &mut out),
        Experiment::Tails => tails(cfg, &mut out),
        Experiment::Instanton => instanton(cfg, &mut out),
        Experiment::Validate => validate(cfg, &mut out),
        Experiment::Report => report(cfg, &mut out),
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(CliError::Failed(_)) => "failed",
        Err(_) => "error",
    };
    out.finish(experiment.name(), &cfg.to_toml(), cfg.seeds.master, start.elapsed().as_secs_f64(), status)?;
    result
}

fn seed(cfg: &RunConfig, tag: u64) -> u64 {
    derive_seed(cfg.seeds.master, tag)
}

fn simulate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let m = cfg.model;
    let dt = cfg.simulation_dt();
    let n = cfg.budgets.n_samples;
    let mut values = Table::new("simulate.csv", &["horizon", "replicate", "time_average"]);
    let mut summary = Table::new("simulate_summary.csv", &["horizon", "n", "mean", "variance", "std_error"]);
    let mut paths = Table::new("paths.csv", &["horizon", "replicate", "t", "x"]);
    for (i, &horizon) in cfg.budgets.horizons.iter().enumerate() {
        let s = derive_seed(seed(cfg, TAG_SIMULATE), i as u64);
        let v = sample_time_averages(&m, horizon, dt, n, s)?;
        for (rep, x) in v.iter().enumerate() {
            values.push(vec![num(horizon), rep.to_string(), num(*x)]);
        }
        let st = summarize(&v);
        summary.push(vec![num(horizon), st.n.to_string(), num(st.mean), num(st.variance), num(st.std_error)]);
        let grid = simulation_grid(horizon, dt)?;
        for rep in 0..cfg.simulate.store_paths.min(n) as u64 {
            let path = sample_path(&m, &grid, 0.0, s, rep)?;
            for (t, x) in grid.times().zip(&path.values) {
                paths.push(vec![num(horizon), rep.to_string(), num(t), num(*x)]);
            }
        }
    }
    out.write_table(&values)?;
    out.write_table(&summary)?;
    out.write_table(&paths)?;
    println!("simulate: {} horizons x {n} paths -> {}", cfg.budgets.horizons.len(), cfg.output_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ExcursionSummary {
    eps0: f64,
    dt: f64,
    n_cycles: usize,
    tau: heavytail_core::excursion::TauStatistics,
    mean_cycle_integral: f64,
    mean_cycle_integral_se: f64,
    max_decomposition_error: f64,
}

fn excursions(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let m = cfg.model;
    let p = m.p();
    let dt = cfg.simulation_dt();
    let eps0 = cfg.excursion_eps0();
    let e = &cfg.excursions;
    let grid = simulation_grid(e.horizon, dt)?;
    let obs = m.observable();
    let mut decomposition = Table::new(
        "decomposition.csv",
        &["replicate", "n_cycles", "sum_cycles", "remainder", "total", "relative_error"],
    );
    let mut worst: f64 = 0.0;
    for rep in 0..e.n_paths as u64 {
        let path = sample_path(&m, &grid, 0.0, seed(cfg, TAG_EXCURSION_PATHS), rep)?;
        let (_, stats) = detect_excursions(&path, eps0, p)?;
        let total = time_average(&path, p)? * grid.horizon();
        let abs: f64 = path.values.windows(2).map(|w| 0.5 * dt * (obs.abs_pow(w[0]) + obs.abs_pow(w[1]))).sum();
        let sum_cycles: f64 = stats.cycle_integrals.iter().sum();
        let err = (sum_cycles + stats.remainder_integral - total).abs() / abs.max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        decomposition.push(vec![
            rep.to_string(),
            stats.n_cycles.to_string(),
            num(sum_cycles),
            num(stats.remainder_integral),
            num(total),
            num(err),
        ]);
    }
    let cycles = simulate_cycles(&m, eps0, dt, e.n_cycles, seed(cfg, TAG_EXCURSION_CYCLES))?;
    let mut table = Table::new(
        "cycles.csv",
        &["cycle", "depart_time", "return_time", "duration", "cycle_integral"],
    );
    for (i, c) in cycles.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            num(c.depart_time),
            num(c.return_time),
            num(c.duration),
            num(c.cycle_integral_raw),
        ]);
    }
    let durations: Vec<f64> = cycles.iter().map(|c| c.duration).collect();
    let integrals: Vec<f64> = cycles.iter().map(|c| c.cycle_integral_raw).collect();
    let c1 = summarize(&integrals);
    let summary = ExcursionSummary {
        eps0,
        dt,
        n_cycles: cycles.len(),
        tau: tau_statistics(&durations)?,
        mean_cycle_integral: c1.mean,
        mean_cycle_integral_se: c1.std_error,
        max_decomposition_error: worst,
    };
    out.write_table(&decomposition)?;
    out.write_table(&table)?;
    out.write_json("excursions.json", &summary)?;
    println!(
        "excursions: E[tau] = {:.4}, E[C_1] = {:.4} +- {:.4}, max decomposition error {worst:.2e}",
        summary.tau.mean, c1.mean, c1.std_error
    );
    Ok(())
}

fn tails(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let m = cfg.model;
    let dt = cfg.simulation_dt();
    let n = cfg.budgets.n_samples;
    let horizons = &cfg.budgets.horizons;
    let thresholds = if cfg.tails.thresholds.is_empty() {
        let pilot_t = horizons[horizons.len() / 2];
        let pilot = sample_time_averages(&m, pilot_t, dt, n, seed(cfg, TAG_TAILS_PILOT))?;
        vec![calibrate_threshold(&pilot, cfg.tails.target_probability)?]
    } else {
        cfg.tails.thresholds.clone()
    };
    let mut by_x: BTreeMap<usize, Vec<heavytail_core::mc::TailEstimate>> = BTreeMap::new();
    for (i, &horizon) in horizons.iter().enumerate() {
        let values = sample_time_averages(&m, horizon, dt, n, derive_seed(seed(cfg, TAG_TAILS), i as u64))?;
        for (j, &x) in thresholds.iter().enumerate() {
            by_x.entry(j).or_default().push(tail_from_samples(&values, x, horizon, m.p()));
        }
    }
    let mut table = Table::new(
        "tails.csv",
        &[
            "x", "horizon", "n_samples", "n_hits", "p_hat", "ci_low", "ci_high", "scaled_rate", "scaled_rate_se",
            "status",
        ],
    );
    let mut fits = Table::new("rate_fit.csv", &["x", "a", "b", "c", "rss", "monotone", "reliable", "status"]);
    for ests in by_x.values() {
        for e in ests {
            table.push(vec![
                num(e.threshold_x),
                num(e.horizon_t),
                e.n_samples.to_string(),
                e.n_hits.to_string(),
                num(e.p_hat),
                num(e.ci_low),
                num(e.ci_high),
                num(e.scaled_rate),
                num(e.scaled_rate_se),
                if e.rate_is_bound { "bound" } else { "ok" }.to_string(),
            ]);
        }
        let x = num(ests[0].threshold_x);
        match rate_convergence_fit(ests) {
            Ok(f) => fits.push(vec![
                x,
                num(f.a),
                num(f.b),
                num(f.c),
                num(f.rss),
                f.monotone.to_string(),
                f.reliable.to_string(),
                if f.reliable { "ok" } else { "unreliable" }.to_string(),
            ]),
            Err(_) => fits.push(vec![
                x,
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "nan".into(),
                "false".into(),
                "false".into(),
                "insufficient".into(),
            ]),
        }
    }
    out.write_table(&table)?;
    out.write_table(&fits)?;
    println!("tails: {} thresholds x {} horizons, n = {n}", thresholds.len(), horizons.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JinfFile {
    prefactor: Option<RatePrefactor>,
    monotone: bool,
    refinement_horizon: f64,
    refinement_dt: f64,
    refinement_relative_gap: f64,
    refinement_passed: bool,
}

fn instanton(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let m = cfg.model;
    let opts = cfg.solver_options();
    let rule = GridRule { dt: cfg.instanton_dt() };
    let x0 = cfg.instanton.boundary_x0;
    let horizons = cfg.instanton_horizons();
    let mut sols = Vec::with_capacity(horizons.len());
    for &h in &horizons {
        sols.push(solve_on_grid(&m, &rule.grid(h)?, x0, 1.0, &opts)?);
    }
    let mut table = Table::new(
        "instanton.csv",
        &["horizon", "n_grid", "dt", "j_h", "multiplier", "el_residual", "iterations", "converged", "status"],
    );
    for s in &sols {
        table.push(vec![
            num(s.horizon_h),
            s.grid.n_steps.to_string(),
            num(s.grid.dt),
            num(s.action),
            num(s.multiplier),
            num(s.el_residual),
            s.iterations.to_string(),
            s.converged.to_string(),
            if s.converged { "ok" } else { "not_converged" }.to_string(),
        ]);
    }
    let per_horizon: Vec<(f64, f64)> = sols.iter().map(|s| (s.horizon_h, s.action)).collect();
    let monotone = per_horizon.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + MONOTONE_TOL));
    let prefactor = if per_horizon.len() >= 3 {
        let fit = fit_exponential_tail(&per_horizon)?;
        let last = per_horizon.last().map(|p| p.1).unwrap_or(f64::NAN);
        Some(RatePrefactor {
            j_inf: fit.j_inf,
            per_horizon: per_horizon.clone(),
            extrapolation_model: ExtrapolationModel { amplitude: fit.amplitude, beta: fit.beta, rss: fit.rss },
            tolerance_achieved: (last - fit.j_inf).abs(),
            gamma: m.gamma(),
            p: m.p(),
            boundary_x0: x0,
        })
    } else {
        None
    };
    let refine_h = horizons[horizons.len() / 2];
    let refinement = grid_refinement_check(&m, refine_h, rule.dt, x0, &opts)?;
    let jinf = JinfFile {
        prefactor,
        monotone,
        refinement_horizon: refinement.horizon,
        refinement_dt: refinement.dt,
        refinement_relative_gap: refinement.relative_gap,
        refinement_passed: refinement.passed(),
    };
    let widest = sols.last().expect("at least one horizon");
    let mut path = Table::new("instanton_path.csv", &["t", "phi"]);
    for (t, v) in widest.grid.times().zip(&widest.phi) {
        path.push(vec![num(t), num(*v)]);
    }
    out.write_table(&table)?;
    out.write_table(&path)?;
    out.write_json("jinf.json", &jinf)?;
    match &jinf.prefactor {
        Some(pf) => println!("instanton: J_inf = {:.10} from {} horizons", pf.j_inf, per_horizon.len()),
        None => println!("instanton: fewer than 3 horizons, no extrapolation"),
    }
    if !jinf.refinement_passed {
        return Err(CliError::Failed(format!(
            "grid refinement at H = {refine_h}: dt and dt/2 differ by {:.2e} relative",
            refinement.relative_gap
        )));
    }
    if !monotone {
        return Err(CliError::Failed("J_H increased with H".into()));
    }
    Ok(())
}

/// Outcome without its timing, so repeated runs give identical files.
#[derive(Serialize)]
struct OutcomeRecord<'a> {
    id: u8,
    name: &'a str,
    passed: bool,
    measured: &'a str,
    tolerance: &'a str,
    metrics: &'a [heavytail_core::validation::Metric],
}

fn validate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let plan = ValidationPlan {
        seed: cfg.seeds.master,
        criteria: cfg.validate.criteria.clone(),
        budgets: cfg.validate.budgets,
        tolerances: cfg.validate.tolerances,
        solver: cfg.solver_options(),
    };
    let mut validator = Validator::new(plan)?;
    let outcomes = validator.run_each(|o| println!("{}", o.line()))?;
    let mut table = Table::new("validation.csv", &["id", "name", "status", "measured", "tolerance"]);
    for o in &outcomes {
        table.push(vec![
            o.id.to_string(),
            o.name.clone(),
            if o.passed { "pass" } else { "fail" }.to_string(),
            o.measured.clone(),
            o.tolerance.clone(),
        ]);
    }
    let records: Vec<OutcomeRecord> = outcomes.iter().map(record).collect();
    out.write_table(&table)?;
    out.write_json("validation.json", &records)?;
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id.to_string()).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria {} failed", failed.join(", "))))
    }
}

fn record(o: &CriterionOutcome) -> OutcomeRecord<'_> {
    OutcomeRecord {
        id: o.id,
        name: &o.name,
        passed: o.passed,
        measured: &o.measured,
        tolerance: &o.tolerance,
        metrics: &o.metrics,
    }
}

#[derive(Deserialize)]
struct TailRow {
    x: f64,
    horizon: f64,
    scaled_rate: String,
    status: String,
}

fn report(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let m = cfg.model;
    let tails_path = cfg.report.tails_csv.clone().unwrap_or_else(|| out.path("tails.csv"));
    let jinf_path = cfg.report.jinf_json.clone().unwrap_or_else(|| out.path("jinf.json"));
    let missing = |p: &std::path::Path, e: &dyn std::fmt::Display| {
        CliError::Config(format!("cannot read {}: {e} (run tails and instanton first)", p.display()))
    };
    let jinf_text = std::fs::read_to_string(&jinf_path).map_err(|e| missing(&jinf_path, &e))?;
    let jinf: JinfFile = serde_json::from_str(&jinf_text).map_err(|e| missing(&jinf_path, &e))?;
    let pf = jinf
        .prefactor
        .ok_or_else(|| CliError::Config(format!("{} has no extrapolated prefactor", jinf_path.display())))?;
    if pf.gamma != m.gamma() || pf.p != m.p() || pf.boundary_x0 != 0.0 {
        return Err(CliError::Config(format!(
            "prefactor was solved for gamma = {}, p = {}, x0 = {} but the model has gamma = {}, p = {}",
            pf.gamma,
            pf.p,
            pf.boundary_x0,
            m.gamma(),
            m.p()
        )));
    }
    let mut reader = csv::Reader::from_path(&tails_path).map_err(|e| missing(&tails_path, &e))?;
    let mut rows: Vec<TailRow> = reader.deserialize().collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.horizon.total_cmp(&b.horizon)));
    let mut table = Table::new(
        "report.csv",
        &["x", "horizon", "mc_scaled_rate", "theory_rate", "gap_relative", "status"],
    );
    for r in &rows {
        let mc: f64 = r.scaled_rate.parse().unwrap_or(f64::NAN);
        let theory = rate_function(r.x, &pf, &m)?;
        let gap = (mc - theory) / theory;
        let status = if !gap.is_finite() {
            "nan"
        } else if r.status == "bound" {
            "bound"
        } else {
            "ok"
        };
        table.push(vec![num(r.x), num(r.horizon), num(mc), num(theory), num(gap), status.to_string()]);
    }
    out.write_table(&table)?;
    println!("report: {} rows, J_inf = {:.10}", table.len(), pf.j_inf);
    Ok(())
}
