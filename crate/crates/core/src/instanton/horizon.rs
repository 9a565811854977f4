use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::ou::{ModelParams, TimeGrid};

use super::solver::{solve_on_grid, MIN_GRID};
use super::{ExtrapolationModel, InstantonSolution, RatePrefactor, SolverOptions};

/// Grid size rule: cells of width `dt` so that the step is the same for
/// every horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRule {
    pub dt: f64,
}

impl GridRule {
    pub fn for_gamma(gamma: f64) -> Self {
        Self { dt: 0.005 / gamma }
    }

    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        ensure_positive(self.dt, "grid dt")?;
        ensure_positive(horizon, "horizon H")?;
        let n = ((horizon / self.dt).round() as usize).max(MIN_GRID);
        TimeGrid::over(horizon, n)
    }
}

/// `J_H = j_inf + amplitude exp(-beta H)` fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialTailFit {
    pub j_inf: f64,
    pub amplitude: f64,
    pub beta: f64,
    pub rss: f64,
}

fn linear_fit(points: &[(f64, f64)], beta: f64) -> ExponentialTailFit {
    let n = points.len() as f64;
    let e: Vec<f64> = points.iter().map(|(h, _)| (-beta * h).exp()).collect();
    let e_mean = e.iter().sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (ei, (_, y)) in e.iter().zip(points) {
        sxx += (ei - e_mean).powi(2);
        sxy += (ei - e_mean) * (y - y_mean);
    }
    let amplitude = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
    let j_inf = y_mean - amplitude * e_mean;
    let rss = e
        .iter()
        .zip(points)
        .map(|(ei, (_, y))| (y - j_inf - amplitude * ei).powi(2))
        .sum();
    ExponentialTailFit { j_inf, amplitude, beta, rss }
}

/// Scans `beta` on a log grid, solving the linear problem for each, then
/// refines the best bracket by golden section.
pub fn fit_exponential_tail(points: &[(f64, f64)]) -> Result<ExponentialTailFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "exponential tail fit needs at least 3 horizons, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(h, y)| !h.is_finite() || !y.is_finite() || *h <= 0.0) {
        return Err(Error::NonFinite("horizon values"));
    }
    let h_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let h_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let lo = (0.5 / h_max).ln();
    let hi = (50.0 / h_min).ln();
    let n_scan = 400;
    let at = |i: usize| lo + (hi - lo) * i as f64 / n_scan as f64;
    let mut best = 0;
    let mut best_rss = f64::INFINITY;
    for i in 0..=n_scan {
        let rss = linear_fit(points, at(i).exp()).rss;
        if rss < best_rss {
            best_rss = rss;
            best = i;
        }
    }
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(n_scan)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let rss = |x: f64| linear_fit(points, x.exp()).rss;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (rss(c), rss(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rss(d);
        }
    }
    let refined = linear_fit(points, (0.5 * (a + b)).exp());
    let scanned = linear_fit(points, at(best).exp());
    Ok(if refined.rss <= scanned.rss { refined } else { scanned })
}

/// Solves every horizon at unit level on a grid from `rule`.
pub(crate) fn horizon_solutions(
    params: &ModelParams,
    h_list: &[f64],
    rule: GridRule,
    boundary_x0: f64,
    opts: &SolverOptions,
) -> Result<Vec<InstantonSolution>> {
    if h_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("H_list must be strictly increasing".into()));
    }
    h_list
        .par_iter()
        .map(|&h| solve_on_grid(params, &rule.grid(h)?, boundary_x0, 1.0, opts))
        .collect()
}

/// Relative slack allowed when checking `J_H` is non-increasing.
pub const MONOTONE_TOL: f64 = 1e-8;

/// Solves each horizon, checks the values do not increase and fits the
/// exponential approach to the infinite-horizon value.
pub fn extrapolate_jinf(
    params: &ModelParams,
    h_list: &[f64],
    rule: GridRule,
    boundary_x0: f64,
    opts: &SolverOptions,
) -> Result<RatePrefactor> {
    if h_list.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "extrapolation needs at least 3 horizons, got {}",
            h_list.len()
        )));
    }
    let sols = horizon_solutions(params, h_list, rule, boundary_x0, opts)?;
    let per_horizon: Vec<(f64, f64)> = sols.iter().map(|s| (s.horizon_h, s.action)).collect();
    for w in per_horizon.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + MONOTONE_TOL) {
            return Err(Error::SolverFailure(format!(
                "J_H increased from {} at H={} to {} at H={}",
                w[0].1, w[0].0, w[1].1, w[1].0
            )));
        }
    }
    let fit = fit_exponential_tail(&per_horizon)?;
    let last = per_horizon.last().map(|p| p.1).unwrap_or(f64::NAN);
    Ok(RatePrefactor {
        j_inf: fit.j_inf,
        tolerance_achieved: (last - fit.j_inf).abs(),
        per_horizon,
        extrapolation_model: ExtrapolationModel {
            amplitude: fit.amplitude,
            beta: fit.beta,
            rss: fit.rss,
        },
        gamma: params.gamma(),
        p: params.p(),
        boundary_x0,
    })
}

/// Default horizons `{5, 10, 20, 40} / gamma`.
pub fn default_horizons(gamma: f64) -> Vec<f64> {
    [5.0, 10.0, 20.0, 40.0].iter().map(|h| h / gamma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_model() {
        let pts: Vec<(f64, f64)> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&h| (h, 2.0 + f64::exp(-h)))
            .collect();
        let fit = fit_exponential_tail(&pts).unwrap();
        assert!((fit.j_inf - 2.0).abs() < 1e-8, "{fit:?}");
        assert!((fit.beta - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_values_fit_flat() {
        let pts: Vec<(f64, f64)> = [5.0, 10.0, 20.0].iter().map(|&h| (h, 1.5)).collect();
        let fit = fit_exponential_tail(&pts).unwrap();
        assert!((fit.j_inf - 1.5).abs() < 1e-14);
        assert_eq!(fit.amplitude, 0.0);
    }

    #[test]
    fn too_few_horizons_is_an_error() {
        assert!(matches!(fit_exponential_tail(&[(5.0, 1.0)]), Err(Error::InsufficientData(_))));
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let r = extrapolate_jinf(&m, &[5.0], GridRule::for_gamma(1.0), 0.0, &SolverOptions::default());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn grid_rule_holds_dt() {
        let rule = GridRule { dt: 0.01 };
        let g = rule.grid(20.0).unwrap();
        assert_eq!(g.n_steps, 2000);
        assert!((g.dt - 0.01).abs() < 1e-15);
        assert_eq!(rule.grid(0.1).unwrap().n_steps, MIN_GRID);
    }
}
