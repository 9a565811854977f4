//! Constrained Freidlin-Wentzell problem
//! `inf { (1/2) int_0^H (phi' + gamma phi)^2 : int_0^H |phi|^p >= c, phi_0 = x0 }`,
//! its infinite-horizon limit `J*_inf` and the rate function
//! `I(x) = J*_inf |x|^{2/p}`.
//!
//! Solves use the scale-invariant ratio formulation: the action is
//! 2-homogeneous and the constraint p-homogeneous, so for `x0 = 0` the problem
//! at level `c` is the minimization of `action / constraint^{2/p}` followed by
//! an exact rescaling. For `x0 != 0` the free nodes are rescaled onto the
//! constraint surface at every evaluation, which keeps every iterate feasible.

mod checks;
pub(crate) mod discrete;
mod horizon;
mod lbfgs;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou::{ModelParams, TimeGrid};

pub use checks::{
    connector_cost, constraint_equivalence_check, gamma_scaling_check, grid_refinement_check,
    shifted_start_comparison, ConstraintEquivalence, RefinementCheck, ShiftedStartComparison, REFINEMENT_TOL,
    SHIFTED_BOUND_TOL,
};
pub(crate) use horizon::horizon_solutions;
pub use horizon::{
    default_horizons, extrapolate_jinf, fit_exponential_tail, ExponentialTailFit, GridRule, MONOTONE_TOL,
};
pub use solver::{solve_finite_horizon, solve_on_grid, solve_with_warm_start};

/// Which integral the level constraint applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    /// `int |phi|^p >= c`.
    #[default]
    Absolute,
    /// `int sign(phi) |phi|^p >= c`.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Ratio minimization with feasibility-preserving rescaling.
    #[default]
    Ratio,
    /// Augmented Lagrangian on the equality constraint; cross-check only.
    AugmentedLagrangian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub constraint: ConstraintKind,
    pub method: SolveMethod,
    /// Randomized starts in addition to the deterministic bump.
    pub n_random_starts: usize,
    pub max_iter: usize,
    /// Stopping tolerance on the discrete Euler-Lagrange residual.
    pub el_tol: f64,
    pub memory: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            constraint: ConstraintKind::Absolute,
            method: SolveMethod::Ratio,
            n_random_starts: 8,
            max_iter: 20_000,
            el_tol: 1e-7,
            memory: 12,
            seed: 0x1A57_A7C0,
        }
    }
}

/// A discretized minimizer with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstantonSolution {
    pub horizon_h: f64,
    pub grid: TimeGrid,
    pub phi: Vec<f64>,
    pub boundary_x0: f64,
    pub level: f64,
    pub constraint: ConstraintKind,
    pub gamma: f64,
    pub p: f64,
    pub action: f64,
    pub constraint_signed: f64,
    pub constraint_abs: f64,
    pub multiplier: f64,
    /// Sup-norm of the discrete stationarity residual over interior nodes.
    pub el_residual: f64,
    /// Same residual written with the standard second difference; it is
    /// `O(dt^2)` rather than zero at the discrete minimizer.
    pub el_residual_continuum: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the start that produced the returned minimizer.
    pub start_index: usize,
}

impl InstantonSolution {
    pub fn min_phi(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_phi(&self) -> f64 {
        self.phi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Path rescaled to another constraint level; exact for `x0 = 0`.
    pub fn at_level(&self, level: f64) -> Result<Self> {
        if self.boundary_x0 != 0.0 {
            return Err(Error::InvalidInput("level rescaling needs a zero boundary value".into()));
        }
        solver::rescaled(self, level)
    }
}

/// Fitted decay of the finite-horizon values `J_H = J_inf + b exp(-beta H)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationModel {
    pub amplitude: f64,
    pub beta: f64,
    pub rss: f64,
}

/// Infinite-horizon prefactor with the per-horizon values it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePrefactor {
    pub j_inf: f64,
    pub per_horizon: Vec<(f64, f64)>,
    pub extrapolation_model: ExtrapolationModel,
    pub tolerance_achieved: f64,
    pub gamma: f64,
    pub p: f64,
    pub boundary_x0: f64,
}

/// `I(x) = J_inf |x|^{2/p}`, defined for `p > 2`.
pub fn rate_function(x: f64, prefactor: &RatePrefactor, params: &ModelParams) -> Result<f64> {
    if !params.is_subexponential() {
        return Err(Error::OutOfRegime(format!(
            "rate function J_inf |x|^(2/p) needs p > 2, got p = {}",
            params.p()
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("x"));
    }
    Ok(prefactor.j_inf * x.abs().powf(params.alpha()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefactor(j: f64) -> RatePrefactor {
        RatePrefactor {
            j_inf: j,
            per_horizon: vec![],
            extrapolation_model: ExtrapolationModel { amplitude: 0.0, beta: 1.0, rss: 0.0 },
            tolerance_achieved: 0.0,
            gamma: 1.0,
            p: 4.0,
            boundary_x0: 0.0,
        }
    }

    #[test]
    fn rate_function_closed_forms() {
        let params = ModelParams::new(1.0, 4.0).unwrap();
        let pf = prefactor(2.0);
        assert_eq!(rate_function(0.0, &pf, &params).unwrap(), 0.0);
        assert_eq!(rate_function(9.0, &pf, &params).unwrap(), 6.0);
        for x in [0.1, 1.0, 3.7, 100.0] {
            assert_eq!(rate_function(-x, &pf, &params).unwrap(), rate_function(x, &pf, &params).unwrap());
        }
    }

    #[test]
    fn rate_function_rejects_exponential_regime() {
        let params = ModelParams::new(1.0, 2.0).unwrap();
        assert!(matches!(rate_function(1.0, &prefactor(1.0), &params), Err(Error::OutOfRegime(_))));
    }
}
