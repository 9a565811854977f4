//! Acceptance criteria as runnable checks.
//!
//! Each criterion returns a [`CriterionOutcome`] holding its measured values
//! and the tolerance it was held to. Budgets and tolerances are plain data so
//! reduced runs (and deliberately broken tolerances) can be configured.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursion::{cycle_count_deviation, detect_excursions, simulate_cycles, tau_statistics};
use crate::instanton::{
    connector_cost, constraint_equivalence_check, default_horizons, extrapolate_jinf, fit_exponential_tail,
    gamma_scaling_check, horizon_solutions, rate_function, solve_finite_horizon, GridRule, RatePrefactor,
    SolverOptions,
};
use crate::mc::{
    calibrate_threshold, estimate_tail, importance_tail, rate_convergence_fit,
    sample_time_averages, simulation_grid, small_noise_check, tail_from_samples, instanton_control,
    wilson_coverage, ShiftMixture, TailEstimate,
};
use crate::oracle::shooting_instanton;
use crate::ou::{action_jh, constraint_fbar, sample_path, time_average, ModelParams, PowerObservable};
use crate::rng::derive_seed;
use crate::stats::{summarize, CompensatedSum};

pub const ALL_CRITERIA: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub oracle_relative: f64,
    pub homogeneity_relative: f64,
    pub gamma_scaling_relative: f64,
    pub equivalence_relative: f64,
    pub positivity: f64,
    pub horizon_monotone: f64,
    pub horizon_extrapolation_relative: f64,
    pub decomposition_relative: f64,
    pub mean_cycle_z: f64,
    pub cycle_count_joint_se: f64,
    pub rate_probability_range: (f64, f64),
    pub rate_step_se: f64,
    pub rate_prefactor_relative: f64,
    pub small_noise_step_se: f64,
    pub small_noise_final_relative: f64,
    pub coverage_range: (f64, f64),
    pub shifted_bound_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_relative: 5e-3,
            homogeneity_relative: 1e-8,
            gamma_scaling_relative: 1e-3,
            equivalence_relative: 1e-6,
            positivity: 1e-6,
            horizon_monotone: 1e-8,
            horizon_extrapolation_relative: 1e-4,
            decomposition_relative: 1e-10,
            mean_cycle_z: 4.0,
            cycle_count_joint_se: 2.0,
            rate_probability_range: (1e-4, 1e-2),
            rate_step_se: 2.0,
            rate_prefactor_relative: 0.3,
            small_noise_step_se: 2.0,
            small_noise_final_relative: 0.25,
            coverage_range: (0.93, 0.97),
            shifted_bound_slack: 1e-6,
        }
    }
}

/// Sample sizes and grids of the Monte Carlo criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub oracle_steps: usize,
    pub decomposition_paths: usize,
    pub decomposition_horizon: f64,
    pub decomposition_dt: f64,
    pub mean_cycle_count: usize,
    pub mean_cycle_dt: f64,
    pub tau_cycles: usize,
    pub cycle_count_replicates: usize,
    pub cycle_count_dt: f64,
    pub rate_pilot_samples: usize,
    pub rate_samples: usize,
    pub rate_dt: f64,
    pub small_noise_samples: usize,
    pub small_noise_dt: f64,
    pub small_noise_shifts: usize,
    pub null_tilt_samples: usize,
    pub tilt_samples: usize,
    pub coverage_repetitions: usize,
    pub coverage_stream_length: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            oracle_steps: 40_000,
            decomposition_paths: 200,
            decomposition_horizon: 100.0,
            decomposition_dt: 0.01,
            mean_cycle_count: 100_000,
            mean_cycle_dt: 1e-4,
            tau_cycles: 100_000,
            cycle_count_replicates: 100_000,
            cycle_count_dt: 0.01,
            rate_pilot_samples: 100_000,
            rate_samples: 1_000_000,
            rate_dt: 0.01,
            small_noise_samples: 100_000,
            small_noise_dt: 0.005,
            small_noise_shifts: 80,
            null_tilt_samples: 10_000,
            tilt_samples: 100_000,
            coverage_repetitions: 10_000,
            coverage_stream_length: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub seed: u64,
    pub criteria: Vec<u8>,
    pub budgets: Budgets,
    pub tolerances: Tolerances,
    pub solver: SolverOptions,
}

impl Default for ValidationPlan {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            criteria: ALL_CRITERIA.to_vec(),
            budgets: Budgets::default(),
            tolerances: Tolerances::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
    pub metrics: Vec<Metric>,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{:>2}] {:<28} {}  measured: {}  tolerance: {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.measured,
            self.tolerance
        )
    }
}

pub fn criterion_name(id: u8) -> &'static str {
    match id {
        1 => "instanton vs shooting",
        2 => "level homogeneity",
        3 => "gamma scaling",
        4 => "constraint equivalence",
        5 => "horizon limit",
        6 => "cycle decomposition",
        7 => "cycle-count concentration",
        8 => "rate convergence",
        9 => "small-noise window",
        10 => "importance sampling",
        11 => "shifted-start bound",
        _ => "unknown",
    }
}

struct Check {
    passed: bool,
    measured: String,
    tolerance: String,
    metrics: Vec<Metric>,
}

fn metric(name: &str, value: f64) -> Metric {
    Metric { name: name.to_string(), value }
}

/// Runs the plan's criteria in order. The reference prefactor shared by
/// several criteria is solved once.
pub struct Validator {
    plan: ValidationPlan,
    prefactor: Option<RatePrefactor>,
}

impl Validator {
    pub fn new(plan: ValidationPlan) -> Result<Self> {
        if let Some(bad) = plan.criteria.iter().find(|c| !ALL_CRITERIA.contains(c)) {
            return Err(Error::InvalidInput(format!("unknown criterion {bad}")));
        }
        Ok(Self { plan, prefactor: None })
    }

    pub fn run_all(&mut self) -> Result<Vec<CriterionOutcome>> {
        self.run_each(|_| {})
    }

    /// Like [`Validator::run_all`], reporting each outcome as it completes.
    pub fn run_each(&mut self, mut on_done: impl FnMut(&CriterionOutcome)) -> Result<Vec<CriterionOutcome>> {
        let ids = self.plan.criteria.clone();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let o = self.run(id)?;
            on_done(&o);
            out.push(o);
        }
        Ok(out)
    }

    pub fn run(&mut self, id: u8) -> Result<CriterionOutcome> {
        let start = Instant::now();
        let check = match id {
            1 => self.oracle()?,
            2 => self.homogeneity()?,
            3 => self.gamma_scaling()?,
            4 => self.equivalence()?,
            5 => self.horizon_limit()?,
            6 => self.decomposition()?,
            7 => self.cycle_count()?,
            8 => self.rate_convergence()?,
            9 => self.small_noise()?,
            10 => self.importance()?,
            11 => self.shifted_start()?,
            _ => return Err(Error::InvalidInput(format!("unknown criterion {id}"))),
        };
        Ok(CriterionOutcome {
            id,
            name: criterion_name(id).to_string(),
            passed: check.passed,
            measured: check.measured,
            tolerance: check.tolerance,
            metrics: check.metrics,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn seed(&self, tag: u64) -> u64 {
        derive_seed(self.plan.seed, tag)
    }

    fn model(gamma: f64, p: f64) -> ModelParams {
        ModelParams::new(gamma, p).expect("fixed model parameters are valid")
    }

    fn reference_prefactor(&mut self) -> Result<RatePrefactor> {
        if let Some(pf) = &self.prefactor {
            return Ok(pf.clone());
        }
        let m = Self::model(1.0, 4.0);
        let pf = extrapolate_jinf(&m, &default_horizons(1.0), GridRule::for_gamma(1.0), 0.0, &self.plan.solver)?;
        self.prefactor = Some(pf.clone());
        Ok(pf)
    }

    fn oracle(&mut self) -> Result<Check> {
        let tol = self.plan.tolerances.oracle_relative;
        let m = Self::model(1.0, 4.0);
        let sol = solve_finite_horizon(&m, 20.0, 4000, 0.0, 1.0, &self.plan.solver)?;
        let shot = shooting_instanton(1.0, 4.0, 20.0, self.plan.budgets.oracle_steps)?;
        let rel = (sol.action - shot.action).abs() / shot.action;
        Ok(Check {
            passed: rel <= tol,
            measured: format!("J_20 = {:.10}, shooting {:.10}, rel {:.2e}", sol.action, shot.action, rel),
            tolerance: format!("rel <= {tol:e}"),
            metrics: vec![
                metric("j_solver", sol.action),
                metric("j_shooting", shot.action),
                metric("relative_gap", rel),
                metric("el_residual", sol.el_residual),
            ],
        })
    }

    fn homogeneity(&mut self) -> Result<Check> {
        let tol = self.plan.tolerances.homogeneity_relative;
        let mut worst: f64 = 0.0;
        let mut metrics = Vec::new();
        for p in [3.0, 4.0] {
            let m = Self::model(1.0, p);
            let base = solve_finite_horizon(&m, 10.0, 2000, 0.0, 1.0, &self.plan.solver)?;
            let base_action = action_jh(&base.phi, &base.grid, 1.0)?.value;
            for c in [0.5, 1.0, 4.0] {
                let sol = solve_finite_horizon(&m, 10.0, 2000, 0.0, c, &self.plan.solver)?;
                let expected = c.powf(2.0 / p) * base.action;
                let solve_gap = (sol.action - expected).abs() / expected;
                // direct re-evaluation of the rescaled level-1 path
                let k = c.powf(1.0 / p);
                let scaled: Vec<f64> = base.phi.iter().map(|v| k * v).collect();
                let a = action_jh(&scaled, &base.grid, 1.0)?.value;
                let f = constraint_fbar(&scaled, &base.grid, p)?;
                let base_f = constraint_fbar(&base.phi, &base.grid, p)?;
                let action_gap = (a - c.powf(2.0 / p) * base_action).abs() / a;
                let level_gap = (f - c * base_f).abs() / f;
                let gap = solve_gap.max(action_gap).max(level_gap);
                metrics.push(metric(&format!("p{p}_c{c}_relative_gap"), gap));
                worst = worst.max(gap);
            }
        }
        Ok(Check {
            passed: worst <= tol,
            measured: format!("max rel gap {worst:.2e} over p in {{3,4}}, c in {{0.5,1,4}}"),
            tolerance: format!("rel <= {tol:e}"),
            metrics,
        })
    }

    fn gamma_scaling(&mut self) -> Result<Check> {
        let tol = self.plan.tolerances.gamma_scaling_relative;
        let gap = gamma_scaling_check(4.0, 1.0, 2.0, &self.plan.solver)?;
        Ok(Check {
            passed: gap <= tol,
            measured: format!("rel gap {gap:.2e}"),
            tolerance: format!("rel <= {tol:e}"),
            metrics: vec![metric("relative_gap", gap)],
        })
    }

    fn equivalence(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let mut metrics = Vec::new();
        let (mut worst_gap, mut worst_min) = (0.0f64, f64::INFINITY);
        for p in [3.0, 4.0] {
            let m = Self::model(1.0, p);
            let eq = constraint_equivalence_check(&m, 10.0, 2000, &self.plan.solver)?;
            metrics.push(metric(&format!("p{p}_j_signed"), eq.j_signed));
            metrics.push(metric(&format!("p{p}_j_abs"), eq.j_abs));
            metrics.push(metric(&format!("p{p}_relative_gap"), eq.relative_gap));
            metrics.push(metric(&format!("p{p}_min_phi"), eq.min_phi_abs));
            worst_gap = worst_gap.max(eq.relative_gap);
            worst_min = worst_min.min(eq.min_phi_abs);
        }
        Ok(Check {
            passed: worst_gap <= t.equivalence_relative && worst_min >= -t.positivity,
            measured: format!("max rel gap {worst_gap:.2e}, min phi {worst_min:.2e}"),
            tolerance: format!("rel <= {:e}, min phi >= -{:e}", t.equivalence_relative, t.positivity),
            metrics,
        })
    }

    fn horizon_limit(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let m = Self::model(1.0, 4.0);
        let sols = horizon_solutions(&m, &default_horizons(1.0), GridRule::for_gamma(1.0), 0.0, &self.plan.solver)?;
        let points: Vec<(f64, f64)> = sols.iter().map(|s| (s.horizon_h, s.action)).collect();
        let worst_rise = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / w[0].1)
            .fold(f64::NEG_INFINITY, f64::max);
        let fit = fit_exponential_tail(&points)?;
        let j40 = points.last().map(|p| p.1).unwrap_or(f64::NAN);
        let rel = (j40 - fit.j_inf).abs() / fit.j_inf;
        let mut metrics: Vec<Metric> = points.iter().map(|(h, j)| metric(&format!("j_h{h}"), *j)).collect();
        metrics.push(metric("j_inf", fit.j_inf));
        metrics.push(metric("max_relative_rise", worst_rise));
        metrics.push(metric("j40_relative_gap", rel));
        Ok(Check {
            passed: worst_rise <= t.horizon_monotone && rel <= t.horizon_extrapolation_relative,
            measured: format!("max rise {worst_rise:.2e}, J_inf {:.10}, |J_40 - J_inf|/J_inf {rel:.2e}", fit.j_inf),
            tolerance: format!(
                "rise <= {:e}, rel <= {:e}",
                t.horizon_monotone, t.horizon_extrapolation_relative
            ),
            metrics,
        })
    }

    fn decomposition(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let b = self.plan.budgets;
        let m = Self::model(1.0, 3.0);
        let eps0 = 0.1;
        let grid = simulation_grid(b.decomposition_horizon, b.decomposition_dt)?;
        let obs = PowerObservable::new(3.0);
        let seed = self.seed(6);
        let mut worst: f64 = 0.0;
        for rep in 0..b.decomposition_paths as u64 {
            let path = sample_path(&m, &grid, 0.0, seed, rep)?;
            let (_, stats) = detect_excursions(&path, eps0, 3.0)?;
            let total = time_average(&path, 3.0)? * grid.horizon();
            let abs: CompensatedSum = path.values.windows(2).map(|w| 0.5 * grid.dt * (obs.abs_pow(w[0]) + obs.abs_pow(w[1]))).collect();
            let mut s: CompensatedSum = stats.cycle_integrals.iter().copied().collect();
            s.add(stats.remainder_integral);
            s.add(-total);
            worst = worst.max(s.value().abs() / abs.value().max(f64::MIN_POSITIVE));
        }
        let cycles = simulate_cycles(&m, eps0, b.mean_cycle_dt, b.mean_cycle_count, self.seed(60))?;
        let c1: Vec<f64> = cycles.iter().map(|c| c.cycle_integral_raw).collect();
        let s = summarize(&c1);
        let z = s.mean / s.std_error;
        Ok(Check {
            passed: worst <= t.decomposition_relative && z.abs() <= t.mean_cycle_z,
            measured: format!(
                "max rel error {worst:.2e} over {} paths; E[C_1] = {:.4} +- {:.4} (z = {z:.2})",
                b.decomposition_paths, s.mean, s.std_error
            ),
            tolerance: format!("rel <= {:e}, |z| <= {}", t.decomposition_relative, t.mean_cycle_z),
            metrics: vec![
                metric("max_relative_error", worst),
                metric("mean_c1", s.mean),
                metric("mean_c1_se", s.std_error),
                metric("z", z),
            ],
        })
    }

    fn cycle_count(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let b = self.plan.budgets;
        let m = Self::model(1.0, 4.0);
        let eps0 = 0.1;
        let dt = b.cycle_count_dt;
        let cycles = simulate_cycles(&m, eps0, dt, b.tau_cycles, self.seed(70))?;
        let durations: Vec<f64> = cycles.iter().map(|c| c.duration).collect();
        let mean_tau = tau_statistics(&durations)?.mean;
        let eps_bar = 0.5 / mean_tau;
        let n = b.cycle_count_replicates;
        let d50 = cycle_count_deviation(&m, eps0, eps_bar, 50.0, n, dt, mean_tau, self.seed(71))?;
        let d100 = cycle_count_deviation(&m, eps0, eps_bar, 100.0, n, dt, mean_tau, self.seed(72))?;
        let se50 = if d50.upper_bound_only { 0.0 } else { d50.log_rate_se };
        let se100 = if d100.upper_bound_only { 0.0 } else { d100.log_rate_se };
        let allowance = t.cycle_count_joint_se * se50.hypot(se100);
        let rise = d100.log_rate - d50.log_rate;
        let passed = !d50.upper_bound_only && d50.log_rate < 0.0 && rise <= allowance;
        Ok(Check {
            passed,
            measured: format!(
                "E[tau] {mean_tau:.4}; log p/T = {:.4} +- {:.4} (T=50), {:.4} +- {:.4}{} (T=100); rise {rise:.4}",
                d50.log_rate,
                d50.log_rate_se,
                d100.log_rate,
                se100,
                if d100.upper_bound_only { " bound" } else { "" }
            ),
            tolerance: format!("T=50 rate < 0, rise <= {} joint se = {allowance:.4}", t.cycle_count_joint_se),
            metrics: vec![
                metric("mean_tau", mean_tau),
                metric("eps_bar", eps_bar),
                metric("log_rate_t50", d50.log_rate),
                metric("log_rate_se_t50", d50.log_rate_se),
                metric("p_hat_t50", d50.p_hat),
                metric("log_rate_t100", d100.log_rate),
                metric("log_rate_se_t100", d100.log_rate_se),
                metric("p_hat_t100", d100.p_hat),
            ],
        })
    }

    fn rate_convergence(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let b = self.plan.budgets;
        let m = Self::model(1.0, 4.0);
        let pf = self.reference_prefactor()?;
        let (lo, hi) = t.rate_probability_range;
        let target = (lo * hi).sqrt();
        let pilot = sample_time_averages(&m, 100.0, b.rate_dt, b.rate_pilot_samples, self.seed(80))?;
        let x = calibrate_threshold(&pilot, target)?;
        drop(pilot);
        let rate = rate_function(x, &pf, &m)?;
        let mut ests: Vec<TailEstimate> = Vec::new();
        for (i, horizon) in [50.0, 100.0, 200.0].into_iter().enumerate() {
            let values = sample_time_averages(&m, horizon, b.rate_dt, b.rate_samples, self.seed(81 + i as u64))?;
            ests.push(tail_from_samples(&values, x, horizon, 4.0));
        }
        let p100 = ests[1].p_hat;
        let in_range = (lo..=hi).contains(&p100);
        let toward = ests.windows(2).all(|w| {
            let allowance = t.rate_step_se * w[0].scaled_rate_se.hypot(w[1].scaled_rate_se);
            (w[1].scaled_rate - rate).abs() <= (w[0].scaled_rate - rate).abs() + allowance
        });
        let fit = if ests.iter().all(|e| e.n_hits > 0) { Some(rate_convergence_fit(&ests)?) } else { None };
        let fit_gap = fit
            .filter(|f| f.reliable)
            .map(|f| (f.a - rate).abs() / rate)
            .unwrap_or(f64::INFINITY);
        let mut metrics = vec![metric("x", x), metric("rate_theory", rate), metric("j_inf", pf.j_inf)];
        for e in &ests {
            metrics.push(metric(&format!("p_hat_t{}", e.horizon_t), e.p_hat));
            metrics.push(metric(&format!("scaled_rate_t{}", e.horizon_t), e.scaled_rate));
            metrics.push(metric(&format!("scaled_rate_se_t{}", e.horizon_t), e.scaled_rate_se));
        }
        if let Some(f) = fit {
            metrics.push(metric("fit_a", f.a));
            metrics.push(metric("fit_b", f.b));
            metrics.push(metric("fit_c", f.c));
            metrics.push(metric("fit_reliable", f64::from(u8::from(f.reliable))));
        }
        metrics.push(metric("fit_relative_gap", fit_gap));
        let rates: Vec<String> = ests.iter().map(|e| format!("{:.4}+-{:.4}", e.scaled_rate, e.scaled_rate_se)).collect();
        Ok(Check {
            passed: in_range && toward && fit_gap <= t.rate_prefactor_relative,
            measured: format!(
                "x {x:.4}, p(T=100) {p100:.2e}, rates [{}] vs I(x) {rate:.4}, fit a {:.4}{} (rel {fit_gap:.3})",
                rates.join(", "),
                fit.map(|f| f.a).unwrap_or(f64::NAN),
                if fit.is_some_and(|f| f.reliable) { "" } else { " unreliable" }
            ),
            tolerance: format!(
                "p in [{lo:e}, {hi:e}], steps toward I within {} se, fit rel <= {}",
                t.rate_step_se, t.rate_prefactor_relative
            ),
            metrics,
        })
    }

    fn small_noise(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let b = self.plan.budgets;
        let m = Self::model(1.0, 4.0);
        let horizon = 10.0;
        let interval = (0.9, 1.1);
        let n_grid = (horizon / b.small_noise_dt).round() as usize;
        let sol = solve_finite_horizon(&m, horizon, n_grid, 0.0, 1.0, &self.plan.solver)?;
        // the window infimum sits at its lower edge
        let j_ref = sol.at_level(interval.0)?.action;
        let mixture = ShiftMixture { n_shifts: b.small_noise_shifts, ..ShiftMixture::default() };
        let rows = small_noise_check(
            &m,
            horizon,
            interval,
            &[0.5, 0.35, 0.25],
            b.small_noise_samples,
            self.seed(90),
            sol.grid.dt,
            Some((&sol, mixture)),
        )?;
        let steps_ok = rows.windows(2).all(|w| {
            let allowance = t.small_noise_step_se * w[0].eps2_log_p_se.hypot(w[1].eps2_log_p_se);
            w[1].eps2_log_p <= w[0].eps2_log_p + allowance
        });
        let last = rows.last().map(|r| r.eps2_log_p).unwrap_or(f64::NAN);
        let final_gap = (last + j_ref).abs() / j_ref;
        let mut metrics = vec![metric("j_ref", j_ref)];
        for r in &rows {
            metrics.push(metric(&format!("eps{}_eps2_log_p", r.eps), r.eps2_log_p));
            metrics.push(metric(&format!("eps{}_se", r.eps), r.eps2_log_p_se));
            metrics.push(metric(&format!("eps{}_ess", r.eps), r.effective_sample_size));
        }
        metrics.push(metric("final_relative_gap", final_gap));
        let vals: Vec<String> = rows.iter().map(|r| format!("{:.4}+-{:.4}", r.eps2_log_p, r.eps2_log_p_se)).collect();
        Ok(Check {
            passed: steps_ok && final_gap <= t.small_noise_final_relative,
            measured: format!("eps^2 log p [{}] vs -J {:.4}, final rel {final_gap:.3}", vals.join(", "), -j_ref),
            tolerance: format!(
                "non-increasing within {} se, final rel <= {}",
                t.small_noise_step_se, t.small_noise_final_relative
            ),
            metrics,
        })
    }

    fn importance(&mut self) -> Result<Check> {
        let t = self.plan.tolerances;
        let b = self.plan.budgets;
        let m = Self::model(1.0, 4.0);
        let horizon = 50.0;
        let dt = 0.01;

        // null tilt against the naive estimator on the same seed
        let grid = simulation_grid(horizon, dt)?;
        let seed = self.seed(100);
        let x_null = 0.1;
        let naive = estimate_tail(&m, x_null, horizon, b.null_tilt_samples, seed, dt)?;
        let zero = vec![0.0; grid.n_steps];
        let null = importance_tail(&m, x_null, horizon, b.null_tilt_samples, seed, dt, &[zero])?;
        let bit_exact = naive.n_hits == null.n_hits && naive.p_hat.to_bits() == null.p_hat.to_bits();

        // a common event under the naive and the tilted sampler
        let pilot = sample_time_averages(&m, horizon, dt, b.tilt_samples, self.seed(101))?;
        let x = calibrate_threshold(&pilot, 0.05)?;
        drop(pilot);
        let tilted_naive = estimate_tail(&m, x, horizon, b.tilt_samples, self.seed(102), dt)?;
        let sol = solve_finite_horizon(&m, 10.0, (10.0 / dt).round() as usize, 0.0, 1.0, &self.plan.solver)?;
        // defensive mixture of the untilted law and the instanton drift
        let controls = vec![Vec::new(), instanton_control(&m, &sol, x * horizon)?];
        let tilted = importance_tail(&m, x, horizon, b.tilt_samples, self.seed(103), dt, &controls)?;
        let overlap = tilted.ci_low <= tilted_naive.ci_high && tilted_naive.ci_low <= tilted.ci_high;

        let coverage = wilson_coverage(0.1, b.coverage_stream_length, b.coverage_repetitions, self.seed(104))?;
        let (clo, chi) = t.coverage_range;
        let covered = (clo..=chi).contains(&coverage);
        Ok(Check {
            passed: bit_exact && overlap && covered,
            measured: format!(
                "null tilt {} ({} hits); x {x:.4}: naive [{:.4}, {:.4}] tilted [{:.4}, {:.4}] (ess {:.0}); coverage {coverage:.4}",
                if bit_exact { "bit-exact" } else { "differs" },
                naive.n_hits,
                tilted_naive.ci_low,
                tilted_naive.ci_high,
                tilted.ci_low,
                tilted.ci_high,
                tilted.effective_sample_size
            ),
            tolerance: format!("bit-exact, CIs overlap, coverage in [{clo}, {chi}]"),
            metrics: vec![
                metric("null_bit_exact", f64::from(u8::from(bit_exact))),
                metric("naive_p_hat", tilted_naive.p_hat),
                metric("tilted_p_hat", tilted.p_hat),
                metric("tilted_ess", tilted.effective_sample_size),
                metric("coverage", coverage),
            ],
        })
    }

    fn shifted_start(&mut self) -> Result<Check> {
        let slack = self.plan.tolerances.shifted_bound_slack;
        let m = Self::model(1.0, 4.0);
        let j_zero = self.reference_prefactor()?.j_inf;
        let rule = GridRule::for_gamma(1.0);
        let mut metrics = vec![metric("j_zero", j_zero)];
        let mut bound_ok = true;
        let mut gaps = Vec::new();
        for eps0 in [0.2, 0.1, 0.05] {
            let j_eps0 = extrapolate_jinf(&m, &default_horizons(1.0), rule, eps0, &self.plan.solver)?.j_inf;
            let connector = connector_cost(eps0, 1.0)?;
            bound_ok &= j_zero <= connector + j_eps0 + slack;
            let gap = (j_eps0 - j_zero).abs();
            metrics.push(metric(&format!("eps{eps0}_j_eps0"), j_eps0));
            metrics.push(metric(&format!("eps{eps0}_connector"), connector));
            metrics.push(metric(&format!("eps{eps0}_gap"), gap));
            gaps.push(gap);
        }
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
        Ok(Check {
            passed: bound_ok && decreasing,
            measured: format!("bound {}; |J_eps0 - J_zero| [{}]", if bound_ok { "holds" } else { "violated" }, shown.join(", ")),
            tolerance: format!("J_zero <= connector + J_eps0 + {slack:e}, gaps decreasing"),
            metrics,
        })
    }
}
