//! Reference values for the variational problem that do not go through the
//! discretized descent solver.
//!
//! * [`shooting_instanton`] integrates the Euler-Lagrange equation
//!   `phi'' = gamma^2 phi - lambda p |phi|^{p-2} phi` from `phi(0) = 0` with RK4,
//!   shooting on the initial slope until the free-end condition
//!   `phi'(H) + gamma phi(H) = 0` holds, and rescales the single-bump solution
//!   to unit constraint level.
//! * [`soliton_prefactor`] evaluates the whole-line ground state
//!   `sech^{2/(p-2)}((p-2) gamma t / 2)`, whose ratio is the infinite-horizon
//!   infimum for `p > 2`.

use crate::error::{ensure_positive, Error, Result};

/// Outcome of the shooting method on a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    /// Action at constraint level one.
    pub action: f64,
    /// Initial slope of the unit-multiplier solution.
    pub slope: f64,
    /// Free-end mismatch `phi'(H) + gamma phi(H)` of the accepted slope.
    pub end_mismatch: f64,
    pub steps: usize,
}

#[derive(Clone, Copy)]
struct State {
    x: f64,
    v: f64,
}

fn accel(x: f64, gamma: f64, p: f64) -> f64 {
    // unit multiplier
    gamma * gamma * x - p * x.abs().powf(p - 2.0) * x
}

fn rk4_step(s: State, h: f64, gamma: f64, p: f64) -> State {
    let k1x = s.v;
    let k1v = accel(s.x, gamma, p);
    let k2x = s.v + 0.5 * h * k1v;
    let k2v = accel(s.x + 0.5 * h * k1x, gamma, p);
    let k3x = s.v + 0.5 * h * k2v;
    let k3v = accel(s.x + 0.5 * h * k2x, gamma, p);
    let k4x = s.v + h * k3v;
    let k4v = accel(s.x + h * k3x, gamma, p);
    State {
        x: s.x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v: s.v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    }
}

/// Integrates from slope `v0`; returns the trajectory when `keep` is set.
fn integrate(v0: f64, horizon: f64, steps: usize, gamma: f64, p: f64, keep: bool) -> (State, Vec<State>) {
    let h = horizon / steps as f64;
    let mut s = State { x: 0.0, v: v0 };
    let mut traj = Vec::new();
    if keep {
        traj.reserve(steps + 1);
        traj.push(s);
    }
    for _ in 0..steps {
        s = rk4_step(s, h, gamma, p);
        if !s.x.is_finite() || s.x.abs() > 1e150 {
            break;
        }
        if keep {
            traj.push(s);
        }
    }
    (s, traj)
}

fn end_mismatch(v0: f64, horizon: f64, steps: usize, gamma: f64, p: f64) -> f64 {
    let (s, _) = integrate(v0, horizon, steps, gamma, p, false);
    s.v + gamma * s.x
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n % 2 == 0);
    let mut acc = values[0] + values[n];
    for (k, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Finite-horizon instanton action at unit constraint level by shooting.
///
/// `steps` must be even (Simpson quadrature of the RK4 trajectory).
pub fn shooting_instanton(gamma: f64, p: f64, horizon: f64, steps: usize) -> Result<ShootingResult> {
    ensure_positive(gamma, "gamma")?;
    ensure_positive(horizon, "horizon")?;
    if p <= 2.0 {
        return Err(Error::OutOfRegime("shooting oracle needs p > 2".into()));
    }
    let steps = steps + steps % 2;

    // scan log-spaced slopes for the first change of sign: positive while the
    // solution is still rising at H, negative once the single bump has returned
    let mut lo = 1e-14_f64;
    if !(end_mismatch(lo, horizon, steps, gamma, p) > 0.0) {
        return Err(Error::SolverFailure("smallest slope already overshoots".into()));
    }
    let mut hi = f64::NAN;
    let mut v = lo;
    while v < 1e8 {
        let next = v * 1.25;
        let g = end_mismatch(next, horizon, steps, gamma, p);
        if g <= 0.0 {
            lo = v;
            hi = next;
            break;
        }
        v = next;
    }
    if !hi.is_finite() {
        return Err(Error::SolverFailure("no sign change in slope scan".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if end_mismatch(mid, horizon, steps, gamma, p) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let slope = 0.5 * (lo + hi);
    let (last, traj) = integrate(slope, horizon, steps, gamma, p, true);
    if traj.len() != steps + 1 {
        return Err(Error::SolverFailure("trajectory diverged".into()));
    }
    let h = horizon / steps as f64;
    let lagrangian: Vec<f64> = traj.iter().map(|s| (s.v + gamma * s.x).powi(2)).collect();
    let mass: Vec<f64> = traj.iter().map(|s| s.x.abs().powf(p)).collect();
    let action = 0.5 * simpson(&lagrangian, h);
    let fbar = simpson(&mass, h);
    Ok(ShootingResult {
        action: action / fbar.powf(2.0 / p),
        slope,
        end_mismatch: last.v + gamma * last.x,
        steps,
    })
}

/// Infinite-horizon prefactor from the whole-line ground state.
pub fn soliton_prefactor(gamma: f64, p: f64) -> Result<f64> {
    ensure_positive(gamma, "gamma")?;
    if p <= 2.0 {
        return Err(Error::OutOfRegime("ground state exists for p > 2 only".into()));
    }
    let beta = 2.0 / (p - 2.0);
    let kappa = 0.5 * (p - 2.0) * gamma;
    // profile decays like exp(-gamma |t|); truncate where it is ~1e-40
    let half_width = 92.0 / gamma;
    let steps = 400_000usize;
    let h = 2.0 * half_width / steps as f64;
    let mut kinetic = Vec::with_capacity(steps + 1);
    let mut potential = Vec::with_capacity(steps + 1);
    let mut mass = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = -half_width + k as f64 * h;
        let sech = 1.0 / (kappa * t).cosh();
        let phi = sech.powf(beta);
        let dphi = -beta * kappa * phi * (kappa * t).tanh();
        kinetic.push(dphi * dphi);
        potential.push(gamma * gamma * phi * phi);
        mass.push(phi.powf(p));
    }
    let action = 0.5 * (simpson(&kinetic, h) + simpson(&potential, h));
    Ok(action / simpson(&mass, h).powf(2.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soliton_quartic_closed_form() {
        // sech profile: (1/2)(2/3 + 2) / (4/3)^{1/2} = 2/sqrt(3)
        let j = soliton_prefactor(1.0, 4.0).unwrap();
        assert!((j - 2.0 / 3f64.sqrt()).abs() < 1e-10, "{j}");
    }

    #[test]
    fn soliton_gamma_scaling() {
        let j1 = soliton_prefactor(1.0, 3.0).unwrap();
        let j2 = soliton_prefactor(2.0, 3.0).unwrap();
        assert!((j2 / j1 - 2f64.powf(1.0 + 2.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn shooting_approaches_soliton_for_long_horizons() {
        let s = shooting_instanton(1.0, 4.0, 20.0, 40_000).unwrap();
        let inf = soliton_prefactor(1.0, 4.0).unwrap();
        assert!(s.action >= inf - 1e-9);
        assert!((s.action - inf) / inf < 1e-4, "{} vs {}", s.action, inf);
    }

    #[test]
    fn shooting_short_horizon_costs_more() {
        let short = shooting_instanton(1.0, 4.0, 2.0, 20_000).unwrap();
        let long = shooting_instanton(1.0, 4.0, 10.0, 20_000).unwrap();
        assert!(short.action > long.action);
    }

    #[test]
    fn rejects_exponential_regime() {
        assert!(shooting_instanton(1.0, 2.0, 5.0, 1000).is_err());
        assert!(soliton_prefactor(1.0, 1.5).is_err());
    }
}
