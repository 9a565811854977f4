//! Ornstein-Uhlenbeck dynamics `dX = -gamma X dt + sigma dW` and the path
//! functionals evaluated on uniform grids: the observable `f_p`, its time
//! average, the Freidlin-Wentzell action and the two constraint integrals.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::rng::NoiseStream;
use crate::stats::CompensatedSum;

/// Mean-reversion rate and observable power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelParams", into = "RawModelParams")]
pub struct ModelParams {
    gamma: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelParams {
    gamma: f64,
    p: f64,
}

impl TryFrom<RawModelParams> for ModelParams {
    type Error = Error;
    fn try_from(raw: RawModelParams) -> Result<Self> {
        ModelParams::new(raw.gamma, raw.p)
    }
}

impl From<ModelParams> for RawModelParams {
    fn from(m: ModelParams) -> Self {
        RawModelParams { gamma: m.gamma, p: m.p }
    }
}

impl ModelParams {
    pub fn new(gamma: f64, p: f64) -> Result<Self> {
        ensure_positive(gamma, "gamma")?;
        ensure_positive(p, "p")?;
        Ok(Self { gamma, p })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Speed exponent `2/p`.
    pub fn alpha(&self) -> f64 {
        2.0 / self.p
    }

    /// True when `p > 2`, i.e. the large deviations are subexponential in time.
    pub fn is_subexponential(&self) -> bool {
        self.p > 2.0
    }

    /// Noise level `T^{-1/p}` of the rescaled process.
    pub fn eps_t(&self, horizon: f64) -> f64 {
        horizon.powf(-1.0 / self.p)
    }

    /// Large deviations speed `T^{2/p}`.
    pub fn speed(&self, horizon: f64) -> f64 {
        horizon.powf(self.alpha())
    }

    pub fn stationary_variance(&self) -> f64 {
        0.5 / self.gamma
    }

    /// Default excursion level: one tenth of the stationary standard deviation.
    pub fn default_eps0(&self) -> f64 {
        0.1 * self.stationary_variance().sqrt()
    }

    pub fn observable(&self) -> PowerObservable {
        PowerObservable::new(self.p)
    }
}

/// Uniform grid `t_k = t_start + k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n_steps: usize) -> Result<Self> {
        ensure_finite(t_start, "t_start")?;
        ensure_positive(dt, "dt")?;
        if n_steps == 0 {
            return Err(Error::InvalidInput("grid needs at least one step".into()));
        }
        Ok(Self { t_start, dt, n_steps })
    }

    /// Grid on `[0, horizon]` with `n_steps` equal cells.
    pub fn over(horizon: f64, n_steps: usize) -> Result<Self> {
        ensure_positive(horizon, "horizon")?;
        if n_steps == 0 {
            return Err(Error::InvalidInput("grid needs at least one step".into()));
        }
        Self::new(0.0, horizon / n_steps as f64, n_steps)
    }

    /// Grid on `[0, horizon]` with the coarsest uniform step not exceeding `max_dt`.
    pub fn covering(horizon: f64, max_dt: f64) -> Result<Self> {
        ensure_positive(horizon, "horizon")?;
        ensure_positive(max_dt, "max_dt")?;
        let n = (horizon / max_dt - 1e-9).ceil().max(1.0) as usize;
        Self::over(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.time(k))
    }
}

/// A trajectory on a uniform grid with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub seed: u64,
    pub replicate_id: u64,
    /// Noise amplitude used by the generator (1 for the unit-noise process).
    pub noise: f64,
    /// Cumulative spatial rescaling applied after generation, `eps_T` for a
    /// path rescaled by `T^{1/p}`.
    pub scale: f64,
}

impl PathSample {
    /// Wraps externally built values (synthetic paths, instantons).
    pub fn from_values(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values for the grid, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path values"));
        }
        Ok(Self { grid, values, seed: 0, replicate_id: 0, noise: 1.0, scale: 1.0 })
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("grid has at least two points")
    }
}

/// Action value with the quadrature that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: f64,
    pub horizon: f64,
    pub quadrature: Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Midpoint,
    Trapezoid,
}

/// Time-stepping scheme for path generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Exact,
    /// Euler-Maruyama, kept as a cross-check of the exact sampler.
    EulerMaruyama,
}

/// `x -> sign(x) |x|^p`, with integer powers evaluated by multiplication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerObservable {
    p: f64,
    int_power: Option<i32>,
}

impl PowerObservable {
    pub fn new(p: f64) -> Self {
        let int_power = (p.fract() == 0.0 && (1.0..=16.0).contains(&p)).then_some(p as i32);
        Self { p, int_power }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `|x|^p`.
    #[inline]
    pub fn abs_pow(&self, x: f64) -> f64 {
        let a = x.abs();
        match self.int_power {
            Some(2) => a * a,
            Some(3) => a * a * a,
            Some(4) => {
                let a2 = a * a;
                a2 * a2
            }
            Some(k) => a.powi(k),
            None => a.powf(self.p),
        }
    }

    /// `sign(x) |x|^p`, zero at the origin.
    #[inline]
    pub fn signed(&self, x: f64) -> f64 {
        // branch-free: the sign of a path value is unpredictable
        self.abs_pow(x).copysign(x)
    }
}

/// `sign(x) |x|^p`.
pub fn f_p_eval(x: f64, p: f64) -> f64 {
    PowerObservable::new(p).signed(x)
}

/// Mean and variance of `X_dt` given `X_0 = x` for the unit-noise process.
pub fn ou_transition(x: f64, dt: f64, gamma: f64) -> Result<(f64, f64)> {
    ensure_finite(x, "x")?;
    if dt.is_nan() || dt < 0.0 {
        return Err(Error::InvalidInput(format!("dt must be >= 0, got {dt}")));
    }
    ensure_positive(gamma, "gamma")?;
    let mean = x * (-gamma * dt).exp();
    let variance = -(-2.0 * gamma * dt).exp_m1() / (2.0 * gamma);
    Ok((mean, variance))
}

/// One-step kernel `x -> decay x + drift + std z` for a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuKernel {
    pub decay: f64,
    pub std: f64,
}

impl OuKernel {
    pub fn new(gamma: f64, dt: f64, noise: f64, scheme: Scheme) -> Self {
        match scheme {
            Scheme::Exact => {
                let decay = (-gamma * dt).exp();
                let var = -(-2.0 * gamma * dt).exp_m1() / (2.0 * gamma);
                Self { decay, std: noise * var.sqrt() }
            }
            Scheme::EulerMaruyama => Self { decay: 1.0 - gamma * dt, std: noise * dt.sqrt() },
        }
    }

    #[inline]
    pub fn step(&self, x: f64, z: f64) -> f64 {
        self.decay * x + self.std * z
    }
}

/// Streaming trapezoid rule on a uniform grid.
#[derive(Debug, Clone, Default)]
pub struct TrapezoidSum {
    sum: CompensatedSum,
    first: Option<f64>,
    last: f64,
}

impl TrapezoidSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, f: f64) {
        if self.first.is_none() {
            self.first = Some(f);
        }
        self.sum.add(f);
        self.last = f;
    }

    /// `dt * (f_0/2 + f_1 + ... + f_{n-1} + f_n/2)`.
    pub fn integral(&self, dt: f64) -> f64 {
        let mut s = self.sum;
        if let Some(f0) = self.first {
            s.add(-0.5 * f0);
            s.add(-0.5 * self.last);
        }
        dt * s.value()
    }
}

fn validate_x0(x0: f64) -> Result<()> {
    ensure_finite(x0, "x0")
}

/// Simulates `dX = -gamma X dt + noise dW` on `grid`, starting from `x0`.
pub fn sample_path_with(
    params: &ModelParams,
    grid: &TimeGrid,
    x0: f64,
    noise: f64,
    scheme: Scheme,
    seed: u64,
    replicate_id: u64,
) -> Result<PathSample> {
    validate_x0(x0)?;
    ensure_finite(noise, "noise")?;
    let kernel = OuKernel::new(params.gamma(), grid.dt, noise, scheme);
    let mut stream = NoiseStream::new(seed, replicate_id);
    let mut values = Vec::with_capacity(grid.len());
    let mut x = x0;
    values.push(x);
    for _ in 0..grid.n_steps {
        x = kernel.step(x, stream.next_normal());
        values.push(x);
    }
    Ok(PathSample { grid: *grid, values, seed, replicate_id, noise, scale: 1.0 })
}

/// Exact simulation of the unit-noise process.
pub fn sample_path(
    params: &ModelParams,
    grid: &TimeGrid,
    x0: f64,
    seed: u64,
    replicate_id: u64,
) -> Result<PathSample> {
    sample_path_with(params, grid, x0, 1.0, Scheme::Exact, seed, replicate_id)
}

/// `(1/T) * int_0^T f_p(X_t) dt` by the trapezoid rule.
pub fn time_average(path: &PathSample, p: f64) -> Result<f64> {
    let horizon = path.grid.horizon();
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("time average needs T > 0".into()));
    }
    Ok(path_integral(&path.values, path.grid.dt, &PowerObservable::new(p)) / horizon)
}

/// Trapezoid integral of `f_p` along grid values.
pub fn path_integral(values: &[f64], dt: f64, obs: &PowerObservable) -> f64 {
    let mut acc = TrapezoidSum::new();
    for &v in values {
        acc.push(obs.signed(v));
    }
    acc.integral(dt)
}

/// Time average computed while simulating, without storing the path.
/// Bit-identical to `sample_path_with` followed by `time_average`.
pub fn simulate_time_average(
    params: &ModelParams,
    grid: &TimeGrid,
    x0: f64,
    noise: f64,
    seed: u64,
    replicate_id: u64,
) -> f64 {
    let kernel = OuKernel::new(params.gamma(), grid.dt, noise, Scheme::Exact);
    let obs = params.observable();
    let mut stream = NoiseStream::new(seed, replicate_id);
    let mut acc = TrapezoidSum::new();
    let mut x = x0;
    acc.push(obs.signed(x));
    for _ in 0..grid.n_steps {
        x = kernel.step(x, stream.next_normal());
        acc.push(obs.signed(x));
    }
    acc.integral(grid.dt) / grid.horizon()
}

/// Divides every value by `T^{1/p}`; the path then follows the small-noise
/// dynamics with noise `eps_T = T^{-1/p}`.
pub fn scale_path(path: &PathSample, horizon: f64, p: f64) -> Result<PathSample> {
    ensure_positive(horizon, "T")?;
    ensure_positive(p, "p")?;
    let factor = horizon.powf(1.0 / p);
    let mut out = path.clone();
    out.values.iter_mut().for_each(|v| *v /= factor);
    out.scale = path.scale / factor;
    Ok(out)
}

fn check_grid_values(phi: &[f64], grid: &TimeGrid) -> Result<()> {
    if phi.len() < 2 {
        return Err(Error::InvalidInput("path needs at least two grid points".into()));
    }
    if phi.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} values, got {}",
            grid.len(),
            phi.len()
        )));
    }
    Ok(())
}

/// Staggered midpoint action
/// `(dt/2) sum_k ((phi_{k+1}-phi_k)/dt + gamma (phi_k+phi_{k+1})/2)^2`.
/// The left boundary value is not constrained here.
pub fn action_jh(phi: &[f64], grid: &TimeGrid, gamma: f64) -> Result<ActionValue> {
    action_with(phi, grid, gamma, Quadrature::Midpoint)
}

pub fn action_with(
    phi: &[f64],
    grid: &TimeGrid,
    gamma: f64,
    quadrature: Quadrature,
) -> Result<ActionValue> {
    check_grid_values(phi, grid)?;
    let value = match quadrature {
        Quadrature::Midpoint => midpoint_action(phi, grid.dt, gamma),
        Quadrature::Trapezoid => {
            let dt = grid.dt;
            let mut acc = CompensatedSum::new();
            for w in phi.windows(2) {
                let slope = (w[1] - w[0]) / dt;
                let a = slope + gamma * w[0];
                let b = slope + gamma * w[1];
                acc.add(0.25 * dt * (a * a + b * b));
            }
            acc.value()
        }
    };
    Ok(ActionValue { value, horizon: grid.horizon(), quadrature })
}

pub(crate) fn midpoint_action(phi: &[f64], dt: f64, gamma: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for w in phi.windows(2) {
        let r = (w[1] - w[0]) / dt + 0.5 * gamma * (w[0] + w[1]);
        acc.add(r * r);
    }
    0.5 * dt * acc.value()
}

/// Time-reversed form `(1/2) int (phi' - gamma phi)^2` on the same staggered
/// stencil. Equal to [`action_jh`] whenever both end values vanish.
pub fn action_reversed(phi: &[f64], grid: &TimeGrid, gamma: f64) -> Result<f64> {
    check_grid_values(phi, grid)?;
    let dt = grid.dt;
    let mut acc = CompensatedSum::new();
    for w in phi.windows(2) {
        let r = (w[1] - w[0]) / dt - 0.5 * gamma * (w[0] + w[1]);
        acc.add(r * r);
    }
    Ok(0.5 * dt * acc.value())
}

/// Signed constraint `int f_p(phi)`.
pub fn constraint_f(phi: &[f64], grid: &TimeGrid, p: f64) -> Result<f64> {
    check_grid_values(phi, grid)?;
    Ok(path_integral(phi, grid.dt, &PowerObservable::new(p)))
}

/// Absolute constraint `int |phi|^p`.
pub fn constraint_fbar(phi: &[f64], grid: &TimeGrid, p: f64) -> Result<f64> {
    check_grid_values(phi, grid)?;
    let obs = PowerObservable::new(p);
    let mut acc = TrapezoidSum::new();
    for &v in phi {
        acc.push(obs.abs_pow(v));
    }
    Ok(acc.integral(grid.dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_grid(n: usize) -> TimeGrid {
        TimeGrid::over(1.0, n).unwrap()
    }

    #[test]
    fn transition_closed_forms() {
        let (m, v) = ou_transition(0.0, f64::INFINITY, 1.0).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(v, 0.5);
        let (m, v) = ou_transition(3.0, 0.0, 1.0).unwrap();
        assert_eq!((m, v), (3.0, 0.0));
        let (m, v) = ou_transition(1.0, std::f64::consts::LN_2, 1.0).unwrap();
        assert_relative_eq!(m, 0.5, epsilon = 1e-15);
        assert_relative_eq!(v, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn transition_rejects_bad_input() {
        assert!(matches!(ou_transition(f64::NAN, 1.0, 1.0), Err(Error::NonFinite(_))));
        assert!(matches!(ou_transition(1.0, -1.0, 1.0), Err(Error::InvalidInput(_))));
        assert!(ou_transition(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn params_validation_and_exponents() {
        assert!(ModelParams::new(0.0, 4.0).is_err());
        assert!(ModelParams::new(1.0, -1.0).is_err());
        assert!(ModelParams::new(f64::INFINITY, 4.0).is_err());
        let m = ModelParams::new(1.0, 4.0).unwrap();
        assert_eq!(m.alpha(), 0.5);
        assert!(m.is_subexponential());
        assert!(!ModelParams::new(1.0, 2.0).unwrap().is_subexponential());
        assert_eq!(m.eps_t(16.0), 0.5);
    }

    #[test]
    fn observable_closed_forms() {
        assert_eq!(f_p_eval(-2.0, 3.0), -8.0);
        assert_eq!(f_p_eval(0.0, 2.5), 0.0);
        assert_eq!(f_p_eval(1.5, 4.0), 5.0625);
        assert_relative_eq!(f_p_eval(2.0, 2.5), 2f64.powf(2.5), epsilon = 1e-15);
        assert_relative_eq!(f_p_eval(-2.0, 2.5), -(2f64.powf(2.5)), epsilon = 1e-15);
    }

    #[test]
    fn time_average_of_constant_and_linear_paths() {
        let grid = TimeGrid::over(7.0, 70).unwrap();
        let path = PathSample::from_values(grid, vec![1.0; 71]).unwrap();
        assert_relative_eq!(time_average(&path, 4.0).unwrap(), 1.0, epsilon = 1e-14);

        let grid = unit_grid(10_000);
        let path = PathSample::from_values(grid, grid.times().collect()).unwrap();
        assert!((time_average(&path, 1.0).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn streaming_average_matches_stored_path() {
        let m = ModelParams::new(1.3, 3.0).unwrap();
        let grid = TimeGrid::covering(20.0, 0.01).unwrap();
        let path = sample_path(&m, &grid, 0.0, 11, 5).unwrap();
        let stored = time_average(&path, 3.0).unwrap();
        let streamed = simulate_time_average(&m, &grid, 0.0, 1.0, 11, 5);
        assert_eq!(stored.to_bits(), streamed.to_bits());
    }

    #[test]
    fn oddness_is_exact() {
        let m = ModelParams::new(1.0, 3.0).unwrap();
        let grid = TimeGrid::covering(10.0, 0.01).unwrap();
        let path = sample_path(&m, &grid, 0.0, 3, 0).unwrap();
        let a = time_average(&path, 3.0).unwrap();
        let b = time_average(&path.negated(), 3.0).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn path_determinism_and_initial_value() {
        let m = ModelParams::new(1.0, 4.0).unwrap();
        let grid = TimeGrid::covering(5.0, 0.01).unwrap();
        let a = sample_path(&m, &grid, 0.25, 99, 3).unwrap();
        let b = sample_path(&m, &grid, 0.25, 99, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.25);
        let c = sample_path(&m, &grid, 0.25, 99, 4).unwrap();
        assert_ne!(a.values[1], c.values[1]);
    }

    #[test]
    fn scaling_closed_forms() {
        let grid = TimeGrid::over(1.0, 4).unwrap();
        let path = PathSample::from_values(grid, vec![0.0, 2.0, -4.0, 1.0, 8.0]).unwrap();
        let half = scale_path(&path, 16.0, 4.0).unwrap();
        assert_eq!(half.values, vec![0.0, 1.0, -2.0, 0.5, 4.0]);
        assert_eq!(half.scale, 0.5);
        let same = scale_path(&path, 1.0, 4.0).unwrap();
        assert_eq!(same.values, path.values);
    }

    #[test]
    fn action_closed_forms() {
        let grid = unit_grid(10_000);
        let zero = vec![0.0; grid.len()];
        assert_eq!(action_jh(&zero, &grid, 1.0).unwrap().value, 0.0);

        let line: Vec<f64> = grid.times().collect();
        let a = action_jh(&line, &grid, 1.0).unwrap();
        assert!((a.value - 7.0 / 6.0).abs() < 1e-6);
        assert_eq!(a.quadrature, Quadrature::Midpoint);
        let b = action_with(&line, &grid, 1.0, Quadrature::Trapezoid).unwrap();
        assert!((b.value - 7.0 / 6.0).abs() < 1e-6);

        let relax: Vec<f64> = grid.times().map(|t| (-t).exp()).collect();
        assert!(action_jh(&relax, &grid, 1.0).unwrap().value < 1e-10);
    }

    #[test]
    fn constraint_closed_forms() {
        let grid = unit_grid(10_000);
        let line: Vec<f64> = grid.times().collect();
        assert!((constraint_f(&line, &grid, 4.0).unwrap() - 0.2).abs() < 1e-6);
        assert!((constraint_fbar(&line, &grid, 4.0).unwrap() - 0.2).abs() < 1e-6);
        let neg: Vec<f64> = line.iter().map(|t| -t).collect();
        assert!((constraint_f(&neg, &grid, 3.0).unwrap() + 0.25).abs() < 1e-6);
        assert!((constraint_fbar(&neg, &grid, 3.0).unwrap() - 0.25).abs() < 1e-6);
        let zero = vec![0.0; grid.len()];
        assert_eq!(constraint_f(&zero, &grid, 3.0).unwrap(), 0.0);
        assert_eq!(constraint_fbar(&zero, &grid, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn action_rejects_short_paths() {
        let grid = unit_grid(1);
        assert!(action_jh(&[0.0], &grid, 1.0).is_err());
        assert!(constraint_f(&[0.0, 1.0, 2.0], &grid, 2.0).is_err());
    }

    #[test]
    fn time_average_rejects_non_finite_values() {
        let grid = unit_grid(2);
        assert!(PathSample::from_values(grid, vec![0.0, f64::NAN, 1.0]).is_err());
    }
}
