//! Monte Carlo estimators for tails of the time average, single cycles and
//! the small-noise window, plus a change-of-drift importance sampler.
//!
//! Replicate `r` always draws from stream `(seed, r)`, and per-replicate
//! results are collected in replicate order before any reduction, so every
//! estimate is independent of the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::excursion::simulate_cycles;
use crate::instanton::InstantonSolution;
use crate::ou::{simulate_time_average, ModelParams, OuKernel, Scheme, TimeGrid, TrapezoidSum};
use crate::rng::{NoiseStream, LANE_AUX};
use crate::stats::{wilson_interval, CompensatedSum, Z95};

/// Naive estimate of a probability with its Wilson interval and the rate at
/// speed `T^{2/p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub threshold_x: f64,
    pub horizon_t: f64,
    pub n_samples: u64,
    pub n_hits: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `-T^{-2/p} log p_hat`; with no hits, the lower bound from `ci_high`.
    pub scaled_rate: f64,
    /// Delta-method standard error of `scaled_rate` (infinite with no hits).
    pub scaled_rate_se: f64,
    pub rate_is_bound: bool,
}

impl TailEstimate {
    pub fn from_counts(threshold_x: f64, horizon_t: f64, p: f64, n_samples: u64, n_hits: u64) -> Self {
        let p_hat = if n_samples == 0 { f64::NAN } else { n_hits as f64 / n_samples as f64 };
        let (ci_low, ci_high) = wilson_interval(n_hits, n_samples, Z95);
        let speed = horizon_t.powf(2.0 / p);
        let (scaled_rate, scaled_rate_se) = if n_hits > 0 {
            let se_p = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt();
            (-p_hat.ln() / speed, se_p / p_hat / speed)
        } else {
            (-ci_high.ln() / speed, f64::INFINITY)
        };
        Self {
            threshold_x,
            horizon_t,
            n_samples,
            n_hits,
            p_hat,
            ci_low,
            ci_high,
            scaled_rate,
            scaled_rate_se,
            rate_is_bound: n_hits == 0,
        }
    }
}

fn check_budget(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("sample budget must be positive".into()));
    }
    Ok(())
}

/// Grid on `[0, T]` with step at most `dt`.
pub fn simulation_grid(horizon: f64, dt: f64) -> Result<TimeGrid> {
    TimeGrid::covering(horizon, dt)
}

/// `L_T^p` for replicates `0..n`, in replicate order.
pub fn sample_time_averages(
    params: &ModelParams,
    horizon: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_budget(n_samples)?;
    let grid = simulation_grid(horizon, dt)?;
    Ok((0..n_samples as u64)
        .into_par_iter()
        .map(|rep| simulate_time_average(params, &grid, 0.0, 1.0, seed, rep))
        .collect())
}

/// `P(L_T >= x)` from stored samples.
pub fn tail_from_samples(values: &[f64], x: f64, horizon: f64, p: f64) -> TailEstimate {
    let hits = values.iter().filter(|&&v| v >= x).count() as u64;
    TailEstimate::from_counts(x, horizon, p, values.len() as u64, hits)
}

/// `P(|L_T - x| < delta)` from stored samples.
pub fn window_from_samples(values: &[f64], x: f64, delta: f64, horizon: f64, p: f64) -> TailEstimate {
    let hits = values.iter().filter(|&&v| (v - x).abs() < delta).count() as u64;
    TailEstimate::from_counts(x, horizon, p, values.len() as u64, hits)
}

/// Threshold hit by exactly `round(target n)` of the samples (at least one).
pub fn calibrate_threshold(values: &[f64], target_p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyData("no samples to calibrate on".into()));
    }
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(Error::InvalidInput(format!("target probability must be in (0,1), got {target_p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((target_p * values.len() as f64).round() as usize).clamp(1, values.len());
    Ok(sorted[k - 1])
}

/// Naive estimate of `P(L_T >= x)`.
pub fn estimate_tail(
    params: &ModelParams,
    x: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    dt: f64,
) -> Result<TailEstimate> {
    if x.is_nan() {
        return Err(Error::NonFinite("x"));
    }
    let values = sample_time_averages(params, horizon, dt, n_samples, seed)?;
    Ok(tail_from_samples(&values, x, horizon, params.p()))
}

/// Naive estimate of `P(x - delta < L_T < x + delta)`.
pub fn estimate_window(
    params: &ModelParams,
    x: f64,
    delta: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    dt: f64,
) -> Result<TailEstimate> {
    ensure_finite(x, "x")?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidInput(format!("delta must be > 0, got {delta}")));
    }
    let values = sample_time_averages(params, horizon, dt, n_samples, seed)?;
    Ok(window_from_samples(&values, x, delta, horizon, params.p()))
}

/// `P(C_1 / T >= x)` over independent cycles.
pub fn single_excursion_tail(
    params: &ModelParams,
    eps0: f64,
    x: f64,
    horizon: f64,
    n_cycles: usize,
    seed: u64,
    dt: f64,
) -> Result<TailEstimate> {
    check_budget(n_cycles)?;
    ensure_positive(horizon, "T")?;
    let cycles = simulate_cycles(params, eps0, dt, n_cycles, seed)?;
    let hits = cycles.iter().filter(|c| c.cycle_integral_raw / horizon >= x).count() as u64;
    Ok(TailEstimate::from_counts(x, horizon, params.p(), n_cycles as u64, hits))
}

/// Weighted estimate from a change-of-drift sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISEstimate {
    pub p_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: u64,
    pub n_hits: u64,
    /// `(sum w 1_A)^2 / sum (w 1_A)^2`.
    pub effective_sample_size: f64,
    /// Sample variance of the likelihood ratio over all samples.
    pub weight_variance: f64,
    /// Fewer than 10 effective samples.
    pub degenerate: bool,
}

/// Drift added to the exact transition at each step, `u_k`, so that the
/// tilted mean follows `psi`: `u_k = psi_{k+1} - exp(-gamma dt) psi_k`.
pub fn control_from_path(psi: &[f64], gamma: f64, dt: f64) -> Vec<f64> {
    let m = (-gamma * dt).exp();
    psi.windows(2).map(|w| w[1] - m * w[0]).collect()
}

/// Instanton rescaled to an integral level `level` (zero boundary value).
fn scaled_instanton(sol: &InstantonSolution, level: f64, dt: f64) -> Result<Vec<f64>> {
    if sol.boundary_x0 != 0.0 {
        return Err(Error::InvalidInput("tilting needs an instanton with zero boundary value".into()));
    }
    if (sol.grid.dt - dt).abs() > 1e-9 * dt {
        return Err(Error::InvalidInput(format!(
            "instanton step {} differs from the simulation step {dt}",
            sol.grid.dt
        )));
    }
    ensure_positive(level, "tilt level")?;
    let factor = (level / sol.level).powf(1.0 / sol.p);
    Ok(sol.phi.iter().map(|v| factor * v).collect())
}

/// Control that steers the mean along the instanton rescaled to the integral
/// level `level`; it covers the instanton window only.
pub fn instanton_control(params: &ModelParams, sol: &InstantonSolution, level: f64) -> Result<Vec<f64>> {
    check_instanton(params, sol)?;
    let psi = scaled_instanton(sol, level, sol.grid.dt)?;
    Ok(control_from_path(&psi, params.gamma(), sol.grid.dt))
}

/// `psi` moved by `shift` steps (positive = earlier); the end is continued by
/// free relaxation and the start is pinned at zero.
pub fn shift_path(psi: &[f64], shift: isize, gamma: f64, dt: f64) -> Vec<f64> {
    let n = psi.len();
    let m = (-gamma * dt).exp();
    let mut out = vec![0.0; n];
    let last = n as isize - 1;
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let src = j as isize + shift;
        *slot = if src < 0 {
            0.0
        } else if src > last {
            psi[n - 1] * m.powi((src - last) as i32)
        } else {
            psi[src as usize]
        };
    }
    out
}

/// Importance sampler over a mixture of drift controls.
///
/// Replicate `r` picks a control uniformly (only when there is more than one)
/// and simulates `X_{k+1} = m X_k + s Z_k + u_k`; the weight is the exact
/// ratio of the untilted to the mixture density of the Gaussian increments.
/// `event` receives the trapezoid integral of `f_p` over the grid.
pub fn importance_sample<F>(
    params: &ModelParams,
    grid: &TimeGrid,
    noise: f64,
    controls: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
    event: F,
) -> Result<ISEstimate>
where
    F: Fn(f64) -> bool + Sync,
{
    check_budget(n_samples)?;
    ensure_positive(noise, "noise")?;
    if controls.is_empty() {
        return Err(Error::InvalidInput("at least one control is needed".into()));
    }
    if controls.iter().flatten().any(|u| !u.is_finite()) {
        return Err(Error::NonFinite("control"));
    }
    let kernel = OuKernel::new(params.gamma(), grid.dt, noise, Scheme::Exact);
    let obs = params.observable();
    let var = kernel.std * kernel.std;
    // per-step coefficients of the log-likelihood ratio of each control
    let coef: Vec<Vec<(f64, f64)>> = controls
        .iter()
        .map(|u| u.iter().take(grid.n_steps).map(|&v| (v / var, v * v / (2.0 * var))).collect())
        .collect();
    let n_ctrl = controls.len();
    let ln_n = (n_ctrl as f64).ln();

    let results: Vec<(bool, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|rep| {
            let mut stream = NoiseStream::new(seed, rep);
            let pick = if n_ctrl > 1 {
                let u = NoiseStream::with_lane(seed, rep, LANE_AUX).next_uniform();
                ((u * n_ctrl as f64) as usize).min(n_ctrl - 1)
            } else {
                0
            };
            let drive = &controls[pick];
            let mut log_lr = vec![0.0; n_ctrl];
            let mut acc = TrapezoidSum::new();
            let mut x = 0.0;
            acc.push(obs.signed(x));
            for k in 0..grid.n_steps {
                let z = stream.next_normal();
                let u = drive.get(k).copied().unwrap_or(0.0);
                x = kernel.step(x, z) + u;
                let e = kernel.std * z + u;
                for (l, c) in log_lr.iter_mut().zip(&coef) {
                    if let Some(&(a, b)) = c.get(k) {
                        *l += a * e - b;
                    }
                }
                acc.push(obs.signed(x));
            }
            let max = log_lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + log_lr.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let weight = (ln_n - lse).exp();
            (event(acc.integral(grid.dt)), weight)
        })
        .collect();
    Ok(summarize_weights(&results))
}

fn summarize_weights(results: &[(bool, f64)]) -> ISEstimate {
    let n = results.len() as f64;
    let mut sw = CompensatedSum::new();
    let mut sw2 = CompensatedSum::new();
    let mut sh = CompensatedSum::new();
    let mut sh2 = CompensatedSum::new();
    let mut hits = 0u64;
    for &(hit, w) in results {
        sw.add(w);
        sw2.add(w * w);
        if hit {
            hits += 1;
            sh.add(w);
            sh2.add(w * w);
        }
    }
    let p_hat = sh.value() / n;
    let var_hit = ((sh2.value() / n - p_hat * p_hat) * n / (n - 1.0).max(1.0)).max(0.0);
    let std_error = (var_hit / n).sqrt();
    let w_mean = sw.value() / n;
    let weight_variance = ((sw2.value() / n - w_mean * w_mean) * n / (n - 1.0).max(1.0)).max(0.0);
    let ess = if sh2.value() > 0.0 { sh.value().powi(2) / sh2.value() } else { 0.0 };
    ISEstimate {
        p_hat,
        std_error,
        ci_low: (p_hat - Z95 * std_error).max(0.0),
        ci_high: p_hat + Z95 * std_error,
        n_samples: results.len() as u64,
        n_hits: hits,
        effective_sample_size: ess,
        weight_variance,
        degenerate: ess < 10.0,
    }
}

/// `P(L_T >= x)` with the drift following the instanton rescaled to
/// `int_0^H f_p = x T` over its window `[0, H]`, and no drift afterwards.
pub fn tilted_tail_is(
    params: &ModelParams,
    x: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    instanton: &InstantonSolution,
) -> Result<ISEstimate> {
    ensure_positive(x, "x")?;
    ensure_positive(horizon, "T")?;
    check_instanton(params, instanton)?;
    let dt = instanton.grid.dt;
    let grid = simulation_grid(horizon, dt)?;
    let psi = scaled_instanton(instanton, x * horizon, grid.dt)?;
    let control = control_from_path(&psi, params.gamma(), grid.dt);
    importance_sample(params, &grid, 1.0, &[control], n_samples, seed, |integral| {
        integral / grid.horizon() >= x
    })
}

fn check_instanton(params: &ModelParams, sol: &InstantonSolution) -> Result<()> {
    if sol.gamma != params.gamma() || sol.p != params.p() {
        return Err(Error::InvalidInput(format!(
            "instanton solved for gamma={}, p={} but the model has gamma={}, p={}",
            sol.gamma,
            sol.p,
            params.gamma(),
            params.p()
        )));
    }
    Ok(())
}

/// Importance sampled `P(L_T >= x)` with explicit controls; a single zero
/// control reproduces [`estimate_tail`] sample for sample.
pub fn importance_tail(
    params: &ModelParams,
    x: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    dt: f64,
    controls: &[Vec<f64>],
) -> Result<ISEstimate> {
    let grid = simulation_grid(horizon, dt)?;
    importance_sample(params, &grid, 1.0, controls, n_samples, seed, |integral| {
        integral / grid.horizon() >= x
    })
}

/// One noise level of the small-noise check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallNoiseRow {
    pub eps: f64,
    pub n_samples: u64,
    pub n_hits: u64,
    pub p_hat: f64,
    pub std_error: f64,
    pub ci_high: f64,
    /// `eps^2 log p_hat`, or `eps^2 log ci_high` when there were no hits.
    pub eps2_log_p: f64,
    pub eps2_log_p_se: f64,
    pub bound_only: bool,
    pub importance: bool,
    pub effective_sample_size: f64,
}

/// Drift mixture for the small-noise sampler: the instanton rescaled to a
/// level inside the interval, shifted so its peak visits evenly spaced times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftMixture {
    pub n_shifts: usize,
    /// Peak times as fractions of H, first and last.
    pub peak_range: (f64, f64),
    /// Tilt level `lo + level_fraction (hi - lo)`.
    pub level_fraction: f64,
    /// Adds the untilted law as one more component, which caps every weight
    /// at the number of components.
    pub defensive: bool,
}

impl Default for ShiftMixture {
    fn default() -> Self {
        Self { n_shifts: 80, peak_range: (0.05, 0.95), level_fraction: 0.25, defensive: true }
    }
}

fn peak_index(psi: &[f64]) -> usize {
    psi.iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn shifted_controls(psi: &[f64], mixture: ShiftMixture, gamma: f64, dt: f64) -> Vec<Vec<f64>> {
    let n = psi.len() - 1;
    let peak = peak_index(psi) as f64;
    let k = mixture.n_shifts.max(1);
    let (first, last) = mixture.peak_range;
    (0..k)
        .map(|i| {
            let frac = first + (last - first) * i as f64 / (k - 1).max(1) as f64;
            let target = if k == 1 { peak } else { n as f64 * frac };
            let shift = (peak - target).round() as isize;
            control_from_path(&shift_path(psi, shift, gamma, dt), gamma, dt)
        })
        .collect()
}

/// `eps^2 log P(F_H^p(X^eps) in (lo, hi))` for `dX = -gamma X dt + eps dW`,
/// `X_0 = 0`, at each `eps`. With an instanton the estimate is importance
/// sampled through a [`ShiftMixture`] of its rescaled copies.
#[allow(clippy::too_many_arguments)]
pub fn small_noise_check(
    params: &ModelParams,
    horizon: f64,
    interval: (f64, f64),
    eps_list: &[f64],
    n_samples: usize,
    seed: u64,
    dt: f64,
    tilt: Option<(&InstantonSolution, ShiftMixture)>,
) -> Result<Vec<SmallNoiseRow>> {
    check_budget(n_samples)?;
    ensure_positive(horizon, "H")?;
    let (lo, hi) = interval;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidInput(format!("empty level interval ({lo}, {hi})")));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("eps_list must be decreasing".into()));
    }
    let grid = match tilt {
        Some((sol, _)) => {
            check_instanton(params, sol)?;
            if (sol.horizon_h - horizon).abs() > 1e-9 * horizon {
                return Err(Error::InvalidInput("instanton horizon differs from H".into()));
            }
            sol.grid
        }
        None => simulation_grid(horizon, dt)?,
    };
    let controls = match tilt {
        Some((sol, mixture)) => {
            if !(lo.is_finite() && hi.is_finite() && lo + hi > 0.0) {
                return Err(Error::InvalidInput("tilting needs a bounded interval above zero".into()));
            }
            let level = lo + mixture.level_fraction * (hi - lo);
            let psi = scaled_instanton(sol, level, grid.dt)?;
            let mut ctrl = shifted_controls(&psi, mixture, params.gamma(), grid.dt);
            if mixture.defensive {
                ctrl.push(Vec::new());
            }
            Some(ctrl)
        }
        None => None,
    };
    let inside = |v: f64| v > lo && v < hi;

    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        ensure_positive(eps, "eps")?;
        let level_seed = crate::rng::derive_seed(seed, i as u64);
        let row = match &controls {
            Some(ctrl) => {
                // the control is a path, so it does not scale with eps
                let est = importance_sample(params, &grid, eps, ctrl, n_samples, level_seed, inside)?;
                let e2 = eps * eps;
                let (val, se) = if est.p_hat > 0.0 {
                    (e2 * est.p_hat.ln(), e2 * est.std_error / est.p_hat)
                } else {
                    (e2 * est.ci_high.ln(), f64::INFINITY)
                };
                SmallNoiseRow {
                    eps,
                    n_samples: est.n_samples,
                    n_hits: est.n_hits,
                    p_hat: est.p_hat,
                    std_error: est.std_error,
                    ci_high: est.ci_high,
                    eps2_log_p: val,
                    eps2_log_p_se: se,
                    bound_only: est.p_hat == 0.0,
                    importance: true,
                    effective_sample_size: est.effective_sample_size,
                }
            }
            None => {
                let kernel = OuKernel::new(params.gamma(), grid.dt, eps, Scheme::Exact);
                let obs = params.observable();
                let hits: u64 = (0..n_samples as u64)
                    .into_par_iter()
                    .map(|rep| {
                        let mut stream = NoiseStream::new(level_seed, rep);
                        let mut acc = TrapezoidSum::new();
                        let mut x = 0.0;
                        acc.push(0.0);
                        for _ in 0..grid.n_steps {
                            x = kernel.step(x, stream.next_normal());
                            acc.push(obs.signed(x));
                        }
                        u64::from(inside(acc.integral(grid.dt)))
                    })
                    .sum();
                let n = n_samples as u64;
                let p_hat = hits as f64 / n as f64;
                let (_, ci_high) = wilson_interval(hits, n, Z95);
                let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
                let e2 = eps * eps;
                let (val, val_se) = if hits > 0 {
                    (e2 * p_hat.ln(), e2 * se / p_hat)
                } else {
                    (e2 * ci_high.ln(), f64::INFINITY)
                };
                SmallNoiseRow {
                    eps,
                    n_samples: n,
                    n_hits: hits,
                    p_hat,
                    std_error: se,
                    ci_high,
                    eps2_log_p: val,
                    eps2_log_p_se: val_se,
                    bound_only: hits == 0,
                    importance: false,
                    effective_sample_size: hits as f64,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// `scaled_rate(T) = a + b T^{-c}` fitted to estimates at a common threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rss: f64,
    /// Consecutive rates move in one direction up to two standard errors.
    pub monotone: bool,
    /// Monotone, finite, and the exponent is not pinned at the lower end of
    /// its range (a pinned exponent means the rates bend the wrong way for
    /// the model and `a` is meaningless).
    pub reliable: bool,
}

fn power_fit(ts: &[f64], ys: &[f64], c: f64) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let xs: Vec<f64> = ts.iter().map(|t| t.powf(-c)).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = ym - b * xm;
    let rss = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, rss)
}

pub fn rate_convergence_fit(estimates: &[TailEstimate]) -> Result<RateFit> {
    if estimates.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 3 horizons, got {}",
            estimates.len()
        )));
    }
    if estimates.iter().any(|e| e.n_hits == 0) {
        return Err(Error::InsufficientData("every horizon needs at least one hit".into()));
    }
    let mut est = estimates.to_vec();
    est.sort_by(|a, b| a.horizon_t.total_cmp(&b.horizon_t));
    let ts: Vec<f64> = est.iter().map(|e| e.horizon_t).collect();
    let ys: Vec<f64> = est.iter().map(|e| e.scaled_rate).collect();

    let n_scan = 1000;
    let mut best = (1.0, f64::INFINITY);
    for i in 1..=n_scan {
        let c = i as f64 / n_scan as f64;
        let rss = power_fit(&ts, &ys, c).2;
        if rss < best.1 {
            best = (c, rss);
        }
    }
    // golden-section refinement inside the neighbouring grid cells
    let (mut lo, mut hi) = ((best.0 - 1.0 / n_scan as f64).max(1e-6), (best.0 + 1.0 / n_scan as f64).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c1 = hi - g * (hi - lo);
        let c2 = lo + g * (hi - lo);
        if power_fit(&ts, &ys, c1).2 < power_fit(&ts, &ys, c2).2 {
            hi = c2;
        } else {
            lo = c1;
        }
    }
    let refined = 0.5 * (lo + hi);
    let c = if power_fit(&ts, &ys, refined).2 <= best.1 { refined } else { best.0 };
    let (a, b, rss) = power_fit(&ts, &ys, c);

    let steps: Vec<(f64, f64)> = est
        .windows(2)
        .map(|w| (w[1].scaled_rate - w[0].scaled_rate, 2.0 * w[0].scaled_rate_se.hypot(w[1].scaled_rate_se)))
        .collect();
    let up = steps.iter().all(|(d, tol)| *d >= -tol);
    let down = steps.iter().all(|(d, tol)| *d <= *tol);
    let monotone = up || down;
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let pinned = c <= 2.0 / n_scan as f64 && b.abs() > 1e-12 * scale;
    Ok(RateFit { a, b, c, rss, monotone, reliable: monotone && a.is_finite() && !pinned })
}

/// Fraction of `repetitions` Bernoulli(`p`) streams of length `n` whose 95%
/// Wilson interval contains `p`.
pub fn wilson_coverage(p: f64, n: u64, repetitions: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("p must be in [0,1], got {p}")));
    }
    check_budget(repetitions)?;
    let covered: usize = (0..repetitions as u64)
        .into_par_iter()
        .map(|r| {
            let mut s = NoiseStream::with_lane(seed, r, LANE_AUX);
            let hits = (0..n).filter(|_| s.next_uniform() < p).count() as u64;
            let (lo, hi) = wilson_interval(hits, n, Z95);
            usize::from(lo <= p && p <= hi)
        })
        .sum();
    Ok(covered as f64 / repetitions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        ModelParams::new(1.0, 4.0).unwrap()
    }

    #[test]
    fn certain_event_has_probability_one() {
        let e = estimate_tail(&model(), f64::NEG_INFINITY, 5.0, 200, 1, 0.01).unwrap();
        assert_eq!(e.p_hat, 1.0);
        assert_eq!(e.ci_high, 1.0);
        let w = estimate_window(&model(), 0.0, f64::INFINITY, 5.0, 200, 1, 0.01).unwrap();
        assert_eq!(w.p_hat, 1.0);
    }

    #[test]
    fn no_hits_reports_a_bound() {
        let e = TailEstimate::from_counts(10.0, 100.0, 4.0, 1000, 0);
        assert!(e.rate_is_bound);
        assert_eq!(e.p_hat, 0.0);
        assert!(e.scaled_rate > 0.0 && e.scaled_rate.is_finite());
    }

    #[test]
    fn calibration_hits_target_count() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let x = calibrate_threshold(&v, 0.01).unwrap();
        assert_eq!(tail_from_samples(&v, x, 1.0, 4.0).n_hits, 10);
    }

    #[test]
    fn null_tilt_is_the_naive_estimator() {
        let m = model();
        let grid = simulation_grid(10.0, 0.01).unwrap();
        let zero = vec![0.0; grid.n_steps];
        let is = importance_tail(&m, 0.05, 10.0, 2000, 9, 0.01, &[zero]).unwrap();
        let naive = estimate_tail(&m, 0.05, 10.0, 2000, 9, 0.01).unwrap();
        assert_eq!(is.n_hits, naive.n_hits);
        assert_eq!(is.p_hat, naive.p_hat);
        assert_eq!(is.weight_variance, 0.0);
    }

    #[test]
    fn shift_path_moves_and_relaxes() {
        let psi = vec![0.0, 1.0, 2.0, 3.0];
        assert_eq!(shift_path(&psi, 0, 1.0, 0.1), psi);
        let early = shift_path(&psi, 1, 1.0, 0.1);
        assert_eq!(&early[..3], &[0.0, 2.0, 3.0]);
        assert!((early[3] - 3.0 * (-0.1f64).exp()).abs() < 1e-15);
        assert_eq!(shift_path(&psi, -2, 1.0, 0.1), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn control_of_relaxation_is_zero() {
        let psi: Vec<f64> = (0..10).map(|k| (-0.1 * k as f64).exp()).collect();
        for u in control_from_path(&psi, 1.0, 0.1) {
            assert!(u.abs() < 1e-15);
        }
    }

    #[test]
    fn recovers_synthetic_rate_model() {
        let est: Vec<TailEstimate> = [50.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|&t| {
                let mut e = TailEstimate::from_counts(1.0, t, 4.0, 100, 10);
                e.scaled_rate = 2.0 + 5.0 / f64::sqrt(t);
                e
            })
            .collect();
        let fit = rate_convergence_fit(&est).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.reliable);
        let flat: Vec<TailEstimate> = est
            .iter()
            .map(|e| TailEstimate { scaled_rate: 3.0, ..*e })
            .collect();
        let fit = rate_convergence_fit(&flat).unwrap();
        assert_eq!(fit.b, 0.0);
        assert!((fit.a - 3.0).abs() < 1e-12);
        assert!(fit.reliable);
        // rates that accelerate in T cannot be fitted by a decaying power
        let bent: Vec<TailEstimate> = est
            .iter()
            .map(|e| TailEstimate { scaled_rate: 0.5 + 1e-3 * e.horizon_t, ..*e })
            .collect();
        assert!(!rate_convergence_fit(&bent).unwrap().reliable);
        assert!(rate_convergence_fit(&est[..2]).is_err());
    }

    #[test]
    fn whole_line_window_is_certain() {
        let rows = small_noise_check(&model(), 2.0, (f64::NEG_INFINITY, f64::INFINITY), &[0.5, 0.25], 100, 3, 0.01, None)
            .unwrap();
        for r in rows {
            assert_eq!(r.p_hat, 1.0);
            assert_eq!(r.eps2_log_p, 0.0);
        }
    }
}
