use rayon::prelude::*;

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::ou::{constraint_f, constraint_fbar, ModelParams, TimeGrid};
use crate::rng::{NoiseStream, LANE_INIT};

use super::discrete::DiscreteProblem;
use super::lbfgs::{self, LbfgsOptions, Objective};
use super::{ConstraintKind, InstantonSolution, SolveMethod, SolverOptions};

/// Residual at which multi-start candidates are compared.
const SCREEN_TOL: f64 = 1e-5;

/// Minimum grid size accepted by [`solve_finite_horizon`].
pub const MIN_GRID: usize = 100;

/// Action of `x0 e_0 + s psi` where `s` puts the path on the constraint level.
struct RatioObjective<'a> {
    pb: &'a DiscreteProblem,
    level_free: f64,
}

impl RatioObjective<'_> {
    fn scale(&self, psi: &[f64]) -> Option<(f64, f64)> {
        let c = self.pb.free_constraint(psi);
        if !(c > 0.0) || !c.is_finite() {
            return None;
        }
        let s = (self.level_free / c).powf(1.0 / self.pb.p());
        s.is_finite().then_some((s, c))
    }
}

impl Objective for RatioObjective<'_> {
    fn dim(&self) -> usize {
        self.pb.n_free()
    }

    fn value_grad(&self, psi: &[f64], grad: &mut [f64]) -> Option<f64> {
        let (s, c) = self.scale(psi)?;
        let phi = self.pb.assemble(psi, s);
        let value = self.pb.action(&phi);
        let n = psi.len();
        let mut ga = vec![0.0; n];
        self.pb.action_gradient(&phi, &mut ga);
        self.pb.free_constraint_gradient(psi, grad);
        let ga_psi: f64 = ga.iter().zip(psi).map(|(a, b)| a * b).sum();
        let coef = s * ga_psi / (self.pb.p() * c);
        for (g, a) in grad.iter_mut().zip(&ga) {
            *g = s * a - coef * *g;
        }
        value.is_finite().then_some(value)
    }

    fn precondition(&self, v: &[f64], out: &mut [f64]) {
        self.pb.precond.solve(v, out);
    }

    fn stationarity(&self, psi: &[f64], grad: &[f64]) -> f64 {
        let Some((s, _)) = self.scale(psi) else {
            return f64::INFINITY;
        };
        grad.iter()
            .enumerate()
            .map(|(j, g)| (g / (s * self.pb.weight(j + 1))).abs())
            .fold(0.0, f64::max)
    }
}

/// `A(phi) - lambda (C - c) + (mu/2) (C - c)^2` over the free nodes.
struct AugmentedLagrangian<'a> {
    pb: &'a DiscreteProblem,
    level_free: f64,
    lambda: f64,
    mu: f64,
}

impl Objective for AugmentedLagrangian<'_> {
    fn dim(&self) -> usize {
        self.pb.n_free()
    }

    fn value_grad(&self, free: &[f64], grad: &mut [f64]) -> Option<f64> {
        let phi = self.pb.assemble(free, 1.0);
        let gap = self.pb.free_constraint(free) - self.level_free;
        let value = self.pb.action(&phi) - self.lambda * gap + 0.5 * self.mu * gap * gap;
        let mut gc = vec![0.0; free.len()];
        self.pb.free_constraint_gradient(free, &mut gc);
        self.pb.action_gradient(&phi, grad);
        let coef = self.mu * gap - self.lambda;
        grad.iter_mut().zip(&gc).for_each(|(g, c)| *g += coef * c);
        value.is_finite().then_some(value)
    }

    fn precondition(&self, v: &[f64], out: &mut [f64]) {
        self.pb.precond.solve(v, out);
    }

    fn stationarity(&self, _free: &[f64], grad: &[f64]) -> f64 {
        grad.iter()
            .enumerate()
            .map(|(j, g)| (g / self.pb.weight(j + 1)).abs())
            .fold(0.0, f64::max)
    }
}

struct Candidate {
    phi: Vec<f64>,
    converged: bool,
    iterations: usize,
    start_index: usize,
}

fn validate(params: &ModelParams, x0: f64, level: f64) -> Result<()> {
    ensure_finite(x0, "boundary_x0")?;
    ensure_positive(level, "constraint level")?;
    if params.p() <= 1.0 {
        return Err(Error::OutOfRegime("instanton solver needs p > 1".into()));
    }
    Ok(())
}

/// Solves the finite-horizon problem on `n_grid` uniform cells of `[0, H]`.
pub fn solve_finite_horizon(
    params: &ModelParams,
    horizon: f64,
    n_grid: usize,
    boundary_x0: f64,
    level: f64,
    opts: &SolverOptions,
) -> Result<InstantonSolution> {
    ensure_positive(horizon, "horizon H")?;
    if n_grid < MIN_GRID {
        return Err(Error::InvalidInput(format!("n_grid must be >= {MIN_GRID}, got {n_grid}")));
    }
    solve_on_grid(params, &TimeGrid::over(horizon, n_grid)?, boundary_x0, level, opts)
}

pub fn solve_on_grid(
    params: &ModelParams,
    grid: &TimeGrid,
    boundary_x0: f64,
    level: f64,
    opts: &SolverOptions,
) -> Result<InstantonSolution> {
    validate(params, boundary_x0, level)?;
    let pb = DiscreteProblem::new(*grid, params.gamma(), params.p(), opts.constraint, boundary_x0);
    let starts = initial_starts(&pb, opts);
    solve_from(&pb, level, starts, opts)
}

/// Like [`solve_on_grid`] with `warm` (a full path, `warm[0]` ignored) added
/// as the first start.
pub fn solve_with_warm_start(
    params: &ModelParams,
    grid: &TimeGrid,
    boundary_x0: f64,
    level: f64,
    warm: &[f64],
    opts: &SolverOptions,
) -> Result<InstantonSolution> {
    validate(params, boundary_x0, level)?;
    if warm.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "warm start has {} values, grid has {}",
            warm.len(),
            grid.len()
        )));
    }
    if warm.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("warm start"));
    }
    let pb = DiscreteProblem::new(*grid, params.gamma(), params.p(), opts.constraint, boundary_x0);
    let mut starts = vec![warm[1..].to_vec()];
    starts.extend(initial_starts(&pb, opts));
    solve_from(&pb, level, starts, opts)
}

fn solve_from(
    pb: &DiscreteProblem,
    level: f64,
    starts: Vec<Vec<f64>>,
    opts: &SolverOptions,
) -> Result<InstantonSolution> {
    // zero boundary: solve at level one and rescale exactly afterwards
    let solve_level = if pb.x0 == 0.0 { 1.0 } else { level };
    let level_free = solve_level - pb.boundary_constraint();
    if !(level_free > 0.0) {
        return Err(Error::InvalidInput(
            "constraint level is already met by the boundary value".into(),
        ));
    }

    let run = |psi: Vec<f64>, o: &SolverOptions, idx: usize| match o.method {
        SolveMethod::Ratio => run_ratio(pb, level_free, psi, o, idx),
        SolveMethod::AugmentedLagrangian => run_augmented(pb, level_free, psi, o, idx),
    };
    // screen every start loosely, then polish the winner
    let screen = SolverOptions { el_tol: opts.el_tol.max(SCREEN_TOL), ..*opts };
    let candidates: Vec<Option<Candidate>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(idx, psi)| run(psi, &screen, idx))
        .collect();

    let solutions: Vec<InstantonSolution> = candidates
        .into_iter()
        .flatten()
        .map(|c| finish(pb, c, solve_level))
        .collect();
    let screened = select(solutions).ok_or_else(|| {
        Error::SolverFailure("no start produced a feasible path".into())
    })?;
    let best = if screened.el_residual <= opts.el_tol {
        screened
    } else {
        match run(screened.phi[1..].to_vec(), opts, screened.start_index) {
            Some(mut c) => {
                c.iterations += screened.iterations;
                let polished = finish(pb, c, solve_level);
                if polished.action <= screened.action {
                    polished
                } else {
                    screened
                }
            }
            None => screened,
        }
    };
    if pb.x0 == 0.0 && level != solve_level {
        rescaled(&best, level)
    } else {
        Ok(best)
    }
}

/// Lowest action; ties within 1e-10 relative go to the lower residual, then
/// to the lower start index.
fn select(mut solutions: Vec<InstantonSolution>) -> Option<InstantonSolution> {
    let best_action = solutions.iter().map(|s| s.action).fold(f64::INFINITY, f64::min);
    if !best_action.is_finite() {
        return None;
    }
    solutions.retain(|s| s.action <= best_action + 1e-10 * best_action.abs());
    solutions.into_iter().min_by(|a, b| {
        a.el_residual
            .total_cmp(&b.el_residual)
            .then(a.start_index.cmp(&b.start_index))
    })
}

fn lbfgs_options(opts: &SolverOptions) -> LbfgsOptions {
    LbfgsOptions { memory: opts.memory.max(1), max_iter: opts.max_iter, tol: opts.el_tol }
}

fn run_ratio(
    pb: &DiscreteProblem,
    level_free: f64,
    psi: Vec<f64>,
    opts: &SolverOptions,
    idx: usize,
) -> Option<Candidate> {
    let obj = RatioObjective { pb, level_free };
    let report = lbfgs::minimize(&obj, psi, lbfgs_options(opts))?;
    let (s, _) = obj.scale(&report.x)?;
    Some(Candidate {
        phi: pb.assemble(&report.x, s),
        converged: report.converged,
        iterations: report.iterations,
        start_index: idx,
    })
}

fn run_augmented(
    pb: &DiscreteProblem,
    level_free: f64,
    psi: Vec<f64>,
    opts: &SolverOptions,
    idx: usize,
) -> Option<Candidate> {
    let ratio = RatioObjective { pb, level_free };
    let (s, _) = ratio.scale(&psi)?;
    let mut free: Vec<f64> = psi.iter().map(|v| s * v).collect();
    let phi = pb.assemble(&free, 1.0);
    let mut ga = vec![0.0; free.len()];
    pb.action_gradient(&phi, &mut ga);
    let ga_phi: f64 = ga.iter().zip(&free).map(|(a, b)| a * b).sum();
    let mut lambda = ga_phi / (pb.p() * level_free);
    let mut mu = 10.0 / level_free.powi(2);
    let mut prev_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..60 {
        let obj = AugmentedLagrangian { pb, level_free, lambda, mu };
        let report = lbfgs::minimize(&obj, free, lbfgs_options(opts))?;
        iterations += report.iterations;
        free = report.x;
        let gap = pb.free_constraint(&free) - level_free;
        if gap.abs() <= 1e-12 * level_free && report.converged {
            converged = true;
            break;
        }
        lambda -= mu * gap;
        if gap.abs() > 0.25 * prev_gap {
            mu *= 4.0;
        }
        prev_gap = gap.abs();
    }
    // snap onto the constraint surface
    let (s, _) = ratio.scale(&free)?;
    Some(Candidate { phi: pb.assemble(&free, s), converged, iterations, start_index: idx })
}

fn finish(pb: &DiscreteProblem, cand: Candidate, level: f64) -> InstantonSolution {
    let mut phi = cand.phi;
    if pb.x0 == 0.0 && pb.kind == ConstraintKind::Absolute {
        let sum: f64 = phi.iter().sum();
        if sum < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
    }
    build_solution(pb, phi, level, cand.converged, cand.iterations, cand.start_index)
}

fn build_solution(
    pb: &DiscreteProblem,
    phi: Vec<f64>,
    level: f64,
    converged: bool,
    iterations: usize,
    start_index: usize,
) -> InstantonSolution {
    let grid = pb.grid;
    let n = grid.n_steps;
    let mut ga = vec![0.0; n];
    pb.action_gradient(&phi, &mut ga);
    let free = &phi[1..];
    let ga_phi: f64 = ga.iter().zip(free).map(|(a, b)| a * b).sum();
    let multiplier = ga_phi / (pb.p() * pb.free_constraint(free));
    let el_residual = pb.stationarity_residual(&phi, multiplier);
    InstantonSolution {
        horizon_h: grid.horizon(),
        grid,
        boundary_x0: pb.x0,
        level,
        constraint: pb.kind,
        gamma: pb.gamma,
        p: pb.p(),
        action: pb.action(&phi),
        constraint_signed: constraint_f(&phi, &grid, pb.p()).unwrap_or(f64::NAN),
        constraint_abs: constraint_fbar(&phi, &grid, pb.p()).unwrap_or(f64::NAN),
        multiplier,
        el_residual,
        el_residual_continuum: pb.continuum_residual(&phi, multiplier),
        converged: converged && el_residual.is_finite(),
        iterations,
        start_index,
        phi,
    }
}

pub(super) fn rescaled(sol: &InstantonSolution, level: f64) -> Result<InstantonSolution> {
    ensure_positive(level, "constraint level")?;
    let factor = (level / sol.level).powf(1.0 / sol.p);
    let pb = DiscreteProblem::new(sol.grid, sol.gamma, sol.p, sol.constraint, sol.boundary_x0);
    let phi: Vec<f64> = sol.phi.iter().map(|v| v * factor).collect();
    Ok(build_solution(&pb, phi, level, sol.converged, sol.iterations, sol.start_index))
}

fn bump(grid: &TimeGrid, center: f64, width: f64) -> Vec<f64> {
    (1..=grid.n_steps)
        .map(|k| {
            let t = grid.time(k);
            let z = (t - center) / width;
            (1.0 - (-t / width).exp()) * (-0.5 * z * z).exp()
        })
        .collect()
}

fn initial_starts(pb: &DiscreteProblem, opts: &SolverOptions) -> Vec<Vec<f64>> {
    let grid = &pb.grid;
    let gamma = pb.gamma;
    let horizon = grid.horizon();
    let mut starts = Vec::with_capacity(opts.n_random_starts + 1);
    starts.push((1..=grid.n_steps).map(|k| {
        let t = grid.time(k);
        t * (-gamma * t).exp()
    }).collect());

    let reach = horizon.min(5.0 / gamma);
    for k in 0..opts.n_random_starts {
        let mut rng = NoiseStream::with_lane(opts.seed, k as u64, LANE_INIT);
        let center = horizon * (0.15 + 0.7 * rng.next_uniform());
        let width = reach * (0.1 + 0.3 * rng.next_uniform());
        let mut psi = bump(grid, center, width);
        if k % 2 == 1 {
            match pb.kind {
                ConstraintKind::Absolute => psi.iter_mut().for_each(|v| *v = -*v),
                ConstraintKind::Signed => {
                    // negative lobe elsewhere, kept only if the start stays feasible
                    let other = horizon * (0.15 + 0.7 * rng.next_uniform());
                    let lobe = bump(grid, other, 0.5 * width);
                    let mixed: Vec<f64> = psi.iter().zip(&lobe).map(|(a, b)| a - 0.5 * b).collect();
                    if pb.free_constraint(&mixed) > 0.0 {
                        psi = mixed;
                    }
                }
            }
        }
        starts.push(psi);
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_opts() -> SolverOptions {
        SolverOptions { n_random_starts: 2, ..SolverOptions::default() }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let o = quick_opts();
        assert!(matches!(solve_finite_horizon(&m, 5.0, 200, 0.0, 0.0, &o), Err(Error::InvalidInput(_))));
        assert!(matches!(solve_finite_horizon(&m, 5.0, 200, 0.0, -1.0, &o), Err(Error::InvalidInput(_))));
        assert!(solve_finite_horizon(&m, 5.0, 50, 0.0, 1.0, &o).is_err());
        assert!(solve_finite_horizon(&m, -5.0, 200, 0.0, 1.0, &o).is_err());
    }

    #[test]
    fn solution_is_feasible_positive_and_stationary() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let sol = solve_finite_horizon(&m, 8.0, 800, 0.0, 1.0, &quick_opts()).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!((sol.constraint_abs - 1.0).abs() < 1e-8);
        assert!(sol.min_phi() >= -1e-6);
        assert_eq!(sol.phi[0], 0.0);
        assert!(sol.el_residual <= 1e-5);
        assert!(sol.action > 0.0 && sol.multiplier > 0.0);
    }

    #[test]
    fn level_rescaling_is_homogeneous() {
        let m = ModelParams::new(1.0, 3.0).unwrap();
        let one = solve_finite_horizon(&m, 6.0, 600, 0.0, 1.0, &quick_opts()).unwrap();
        let four = solve_finite_horizon(&m, 6.0, 600, 0.0, 4.0, &quick_opts()).unwrap();
        let expected = 4f64.powf(2.0 / 3.0) * one.action;
        assert!(((four.action - expected) / expected).abs() < 1e-12);
        assert!((four.constraint_abs - 4.0).abs() < 1e-10);
    }

    #[test]
    fn shifted_boundary_is_respected() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let sol = solve_finite_horizon(&m, 8.0, 800, 0.2, 1.0, &quick_opts()).unwrap();
        assert_eq!(sol.phi[0], 0.2);
        assert!((sol.constraint_abs - 1.0).abs() < 1e-8);
        let zero = solve_finite_horizon(&m, 8.0, 800, 0.0, 1.0, &quick_opts()).unwrap();
        assert!(sol.action < zero.action);
    }

    #[test]
    fn warm_start_is_never_worse() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let grid = TimeGrid::over(5.0, 500).unwrap();
        // feasible warm start with constraint above one
        let warm: Vec<f64> = grid.times().map(|t| 3.0 * t * (-t).exp()).collect();
        let fbar = constraint_fbar(&warm, &grid, 4.0).unwrap();
        assert!(fbar >= 1.0);
        let warm_action = crate::ou::action_jh(&warm, &grid, 1.0).unwrap().value;
        let sol = solve_with_warm_start(&m, &grid, 0.0, 1.0, &warm, &quick_opts()).unwrap();
        assert!(sol.action <= warm_action);
    }

    #[test]
    fn augmented_lagrangian_agrees_with_ratio() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let ratio = solve_finite_horizon(&m, 6.0, 600, 0.0, 1.0, &quick_opts()).unwrap();
        let opts = SolverOptions { method: SolveMethod::AugmentedLagrangian, ..quick_opts() };
        let al = solve_finite_horizon(&m, 6.0, 600, 0.0, 1.0, &opts).unwrap();
        assert!(((al.action - ratio.action) / ratio.action).abs() < 1e-6, "{} vs {}", al.action, ratio.action);
    }
}
