use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Result};
use crate::ou::ModelParams;

use super::horizon::{default_horizons, extrapolate_jinf, GridRule};
use super::solver::solve_finite_horizon;
use super::{ConstraintKind, SolverOptions};

/// Signed and absolute constraint solves on the same grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEquivalence {
    pub j_signed: f64,
    pub j_abs: f64,
    pub gap: f64,
    pub relative_gap: f64,
    /// Smallest value of the absolute-constraint minimizer.
    pub min_phi_abs: f64,
    pub converged: bool,
}

pub fn constraint_equivalence_check(
    params: &ModelParams,
    horizon: f64,
    n_grid: usize,
    opts: &SolverOptions,
) -> Result<ConstraintEquivalence> {
    let abs_opts = SolverOptions { constraint: ConstraintKind::Absolute, ..*opts };
    let signed_opts = SolverOptions { constraint: ConstraintKind::Signed, ..*opts };
    let abs = solve_finite_horizon(params, horizon, n_grid, 0.0, 1.0, &abs_opts)?;
    let signed = solve_finite_horizon(params, horizon, n_grid, 0.0, 1.0, &signed_opts)?;
    let gap = (signed.action - abs.action).abs();
    Ok(ConstraintEquivalence {
        j_signed: signed.action,
        j_abs: abs.action,
        gap,
        relative_gap: gap / abs.action,
        min_phi_abs: abs.min_phi(),
        converged: abs.converged && signed.converged,
    })
}

/// Relative gap in `J_inf(gamma2) = (gamma2/gamma1)^{1+2/p} J_inf(gamma1)`,
/// each side extrapolated over `{5, 10, 20, 40}/gamma` at `dt = 0.005/gamma`.
pub fn gamma_scaling_check(p: f64, gamma1: f64, gamma2: f64, opts: &SolverOptions) -> Result<f64> {
    let m1 = ModelParams::new(gamma1, p)?;
    let m2 = ModelParams::new(gamma2, p)?;
    if gamma1 == gamma2 {
        return Ok(0.0);
    }
    let j1 = extrapolate_jinf(&m1, &default_horizons(gamma1), GridRule::for_gamma(gamma1), 0.0, opts)?.j_inf;
    let j2 = extrapolate_jinf(&m2, &default_horizons(gamma2), GridRule::for_gamma(gamma2), 0.0, opts)?.j_inf;
    let predicted = (gamma2 / gamma1).powf(1.0 + 2.0 / p) * j1;
    Ok((j2 - predicted).abs() / j2)
}

/// `(1/2) int_0^1 (eps0 + gamma eps0 t)^2 dt` by composite Simpson.
pub fn connector_cost(eps0: f64, gamma: f64) -> Result<f64> {
    ensure_finite(eps0, "eps0")?;
    ensure_positive(gamma, "gamma")?;
    let n = 64;
    let h = 1.0 / n as f64;
    let f = |t: f64| (eps0 + gamma * eps0 * t).powi(2);
    let mut acc = f(0.0) + f(1.0);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    Ok(0.5 * acc * h / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedStartComparison {
    pub eps0: f64,
    pub j_eps0: f64,
    pub j_zero: f64,
    pub connector: f64,
    /// `j_zero <= connector + j_eps0 + tol`.
    pub bound_holds: bool,
}

/// Absolute slack in the shifted-start bound.
pub const SHIFTED_BOUND_TOL: f64 = 1e-6;

/// Extrapolated prefactors for a path started at `eps0` and at zero.
pub fn shifted_start_comparison(
    params: &ModelParams,
    eps0: f64,
    h_list: &[f64],
    rule: GridRule,
    opts: &SolverOptions,
) -> Result<ShiftedStartComparison> {
    ensure_positive(eps0, "eps0")?;
    let j_eps0 = extrapolate_jinf(params, h_list, rule, eps0, opts)?.j_inf;
    let j_zero = extrapolate_jinf(params, h_list, rule, 0.0, opts)?.j_inf;
    let connector = connector_cost(eps0, params.gamma())?;
    Ok(ShiftedStartComparison {
        eps0,
        j_eps0,
        j_zero,
        connector,
        bound_holds: j_zero <= connector + j_eps0 + SHIFTED_BOUND_TOL,
    })
}

/// `J_H` on steps `dt` and `dt/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub horizon: f64,
    pub dt: f64,
    pub j_coarse: f64,
    pub j_fine: f64,
    pub relative_gap: f64,
}

/// Relative gap allowed between the two grids before `J_H` is reported.
pub const REFINEMENT_TOL: f64 = 1e-4;

impl RefinementCheck {
    pub fn passed(&self) -> bool {
        self.relative_gap <= REFINEMENT_TOL
    }
}

pub fn grid_refinement_check(
    params: &ModelParams,
    horizon: f64,
    dt: f64,
    boundary_x0: f64,
    opts: &SolverOptions,
) -> Result<RefinementCheck> {
    ensure_positive(horizon, "H")?;
    ensure_positive(dt, "dt")?;
    let n = (horizon / dt).round() as usize;
    let coarse = solve_finite_horizon(params, horizon, n, boundary_x0, 1.0, opts)?;
    let fine = solve_finite_horizon(params, horizon, 2 * n, boundary_x0, 1.0, opts)?;
    Ok(RefinementCheck {
        horizon,
        dt: coarse.grid.dt,
        j_coarse: coarse.action,
        j_fine: fine.action,
        relative_gap: (coarse.action - fine.action).abs() / fine.action,
    })
}
