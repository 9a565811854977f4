//! Regeneration cycles of a path started at the origin.
//!
//! A cycle starts at the previous return to zero, departs when the path first
//! reaches `eps0` and ends at the next downcrossing of zero. Crossing times are
//! interpolated linearly between grid values and the observable is integrated
//! as the piecewise-linear interpolant of its grid values, so the cycle
//! integrals plus the remainder add up to the trapezoid integral of the whole
//! path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::ou::{ModelParams, OuKernel, PathSample, PowerObservable, Scheme};
use crate::rng::NoiseStream;
use crate::stats::{summarize, wilson_interval, CompensatedSum, Z95};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    pub start_time: f64,
    pub depart_time: f64,
    pub return_time: f64,
    pub cycle_integral_raw: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CycleStats {
    pub n_cycles: usize,
    /// Integral after the last completed return.
    pub remainder_integral: f64,
    /// Trapezoid integral of `f_p` over the whole path.
    pub total_integral: f64,
    pub horizon: f64,
    /// Zero when no cycle completed.
    pub mean_duration: f64,
    pub durations: Vec<f64>,
    pub cycle_integrals: Vec<f64>,
}

impl CycleStats {
    /// `sum C_i + C~ - T L_T`, relative to `int |f_p|`.
    pub fn decomposition_error(&self, abs_integral: f64) -> f64 {
        let mut s: CompensatedSum = self.cycle_integrals.iter().copied().collect();
        s.add(self.remainder_integral);
        s.add(-self.total_integral);
        s.value().abs() / abs_integral.max(f64::MIN_POSITIVE)
    }
}

/// Streaming cycle detector fed one grid value at a time.
#[derive(Debug, Clone)]
pub struct ExcursionTracker {
    eps0: f64,
    dt: f64,
    t_start: f64,
    obs: PowerObservable,
    cells: usize,
    prev_x: f64,
    prev_f: f64,
    departed: Option<f64>,
    cycle_start: f64,
    cycle: CompensatedSum,
    total: CompensatedSum,
    abs_total: CompensatedSum,
    records: Vec<ExcursionRecord>,
}

impl ExcursionTracker {
    pub fn new(eps0: f64, p: f64, t_start: f64, dt: f64, x0: f64) -> Result<Self> {
        ensure_positive(eps0, "eps0")?;
        ensure_positive(dt, "dt")?;
        ensure_finite(t_start, "t_start")?;
        ensure_finite(x0, "x0")?;
        let obs = PowerObservable::new(p);
        Ok(Self {
            eps0,
            dt,
            t_start,
            obs,
            cells: 0,
            prev_x: x0,
            prev_f: obs.signed(x0),
            departed: None,
            cycle_start: t_start,
            cycle: CompensatedSum::new(),
            total: CompensatedSum::new(),
            abs_total: CompensatedSum::new(),
            records: Vec::new(),
        })
    }

    /// Consumes the next grid value; returns true when a cycle completed.
    #[inline]
    pub fn push(&mut self, x: f64) -> bool {
        let (xa, fa) = (self.prev_x, self.prev_f);
        let fb = self.obs.signed(x);
        let dt = self.dt;
        let t0 = self.t_start + self.cells as f64 * dt;
        let cell = 0.5 * dt * (fa + fb);
        self.total.add(cell);
        self.abs_total.add(0.5 * dt * (fa.abs() + fb.abs()));
        self.cells += 1;
        self.prev_x = x;
        self.prev_f = fb;

        match self.departed {
            None => {
                if xa < self.eps0 && x >= self.eps0 {
                    let theta = (self.eps0 - xa) / (x - xa);
                    self.departed = Some(t0 + theta * dt);
                }
                self.cycle.add(cell);
                false
            }
            Some(depart) => {
                if x > 0.0 {
                    self.cycle.add(cell);
                    return false;
                }
                let theta = xa / (xa - x);
                let f_mid = fa + theta * (fb - fa);
                self.cycle.add(0.5 * theta * dt * (fa + f_mid));
                let ret = t0 + theta * dt;
                self.records.push(ExcursionRecord {
                    start_time: self.cycle_start,
                    depart_time: depart,
                    return_time: ret,
                    cycle_integral_raw: self.cycle.value(),
                    duration: ret - self.cycle_start,
                });
                self.cycle = CompensatedSum::new();
                self.cycle.add(0.5 * (1.0 - theta) * dt * (f_mid + fb));
                self.cycle_start = ret;
                self.departed = None;
                true
            }
        }
    }

    pub fn records(&self) -> &[ExcursionRecord] {
        &self.records
    }

    pub fn n_cycles(&self) -> usize {
        self.records.len()
    }

    /// Integral of `|f_p|` so far, the scale for decomposition errors.
    pub fn abs_integral(&self) -> f64 {
        self.abs_total.value()
    }

    pub fn finish(self) -> (Vec<ExcursionRecord>, CycleStats) {
        let durations: Vec<f64> = self.records.iter().map(|r| r.duration).collect();
        let cycle_integrals: Vec<f64> = self.records.iter().map(|r| r.cycle_integral_raw).collect();
        let n = durations.len();
        let mean_duration = if n == 0 { 0.0 } else { durations.iter().sum::<f64>() / n as f64 };
        let stats = CycleStats {
            n_cycles: n,
            remainder_integral: self.cycle.value(),
            total_integral: self.total.value(),
            horizon: self.cells as f64 * self.dt,
            mean_duration,
            durations,
            cycle_integrals,
        };
        (self.records, stats)
    }
}

/// Splits a stored path into completed cycles and a remainder.
pub fn detect_excursions(path: &PathSample, eps0: f64, p: f64) -> Result<(Vec<ExcursionRecord>, CycleStats)> {
    ensure_positive(eps0, "eps0")?;
    let x0 = path.values[0];
    if x0 != 0.0 {
        return Err(Error::InvalidInput(format!("cycle detection needs a path started at 0, got {x0}")));
    }
    let mut tracker = ExcursionTracker::new(eps0, p, path.grid.t_start, path.grid.dt, x0)?;
    for &x in &path.values[1..] {
        tracker.push(x);
    }
    Ok(tracker.finish())
}

/// Number of completed cycles `max { k : tau_k <= T }` from completion times.
pub fn cycle_count(return_times: &[f64], horizon: f64) -> usize {
    return_times.iter().take_while(|&&t| t <= horizon).count()
}

/// `C_i / T`, the cycle integrals of the rescaled path.
pub fn cycle_integrals_scaled(stats: &CycleStats, horizon: f64) -> Result<Vec<f64>> {
    ensure_positive(horizon, "T")?;
    Ok(stats.cycle_integrals.iter().map(|c| c / horizon).collect())
}

/// Simulates one cycle from the origin on steps of `dt`, `max_steps` at most.
pub fn simulate_cycle(
    params: &ModelParams,
    eps0: f64,
    dt: f64,
    seed: u64,
    replicate_id: u64,
    max_steps: usize,
) -> Result<ExcursionRecord> {
    let kernel = OuKernel::new(params.gamma(), dt, 1.0, Scheme::Exact);
    let mut stream = NoiseStream::new(seed, replicate_id);
    let mut tracker = ExcursionTracker::new(eps0, params.p(), 0.0, dt, 0.0)?;
    let mut x = 0.0;
    for _ in 0..max_steps {
        x = kernel.step(x, stream.next_normal());
        if tracker.push(x) {
            return Ok(tracker.records()[0]);
        }
    }
    Err(Error::SolverFailure(format!("cycle {replicate_id} did not complete in {max_steps} steps")))
}

/// Step cap for a single cycle: a horizon of `10^4 / gamma`.
pub fn default_max_steps(params: &ModelParams, dt: f64) -> usize {
    (1e4 / (params.gamma() * dt)).ceil() as usize
}

/// Independent cycles, cycle `i` driven by replicate `i` of `seed`.
pub fn simulate_cycles(
    params: &ModelParams,
    eps0: f64,
    dt: f64,
    n_cycles: usize,
    seed: u64,
) -> Result<Vec<ExcursionRecord>> {
    ensure_positive(eps0, "eps0")?;
    ensure_positive(dt, "dt")?;
    let cap = default_max_steps(params, dt);
    (0..n_cycles as u64)
        .into_par_iter()
        .map(|i| simulate_cycle(params, eps0, dt, seed, i, cap))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauStatistics {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_ci: (f64, f64),
    /// Sample mean of `exp(duration)`.
    pub mgf_at_1: f64,
    pub mgf_ci: (f64, f64),
    /// Share of the largest sample in the MGF sum. Large values mean the
    /// estimate is driven by a few long cycles and should not be trusted.
    pub mgf_max_share: f64,
}

pub fn tau_statistics(durations: &[f64]) -> Result<TauStatistics> {
    match durations.len() {
        0 => return Err(Error::EmptyData("no cycles observed".into())),
        1 => return Err(Error::InsufficientData("tau statistics need at least 2 cycles".into())),
        _ => {}
    }
    if durations.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("durations"));
    }
    let s = summarize(durations);
    let exps: Vec<f64> = durations.iter().map(|d| d.exp()).collect();
    let m = summarize(&exps);
    let max = exps.iter().copied().fold(0.0, f64::max);
    let total = m.mean * m.n as f64;
    Ok(TauStatistics {
        n: s.n,
        mean: s.mean,
        variance: s.variance,
        mean_ci: (s.mean - Z95 * s.std_error, s.mean + Z95 * s.std_error),
        mgf_at_1: m.mean,
        mgf_ci: (m.mean - Z95 * m.std_error, m.mean + Z95 * m.std_error),
        mgf_max_share: if total > 0.0 { max / total } else { 0.0 },
    })
}

/// Probability that the cycle count leaves `(T (1/E tau - eps_bar), T (1/E tau + eps_bar))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleCountDeviation {
    pub horizon: f64,
    pub interval: (f64, f64),
    pub n_replicates: usize,
    pub hits: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `log(p_hat) / T`, or `log(ci_high) / T` when there were no hits.
    pub log_rate: f64,
    /// Delta-method standard error of `log_rate`; infinite without hits.
    pub log_rate_se: f64,
    pub upper_bound_only: bool,
}

pub fn cycle_count_deviation(
    params: &ModelParams,
    eps0: f64,
    eps_bar: f64,
    horizon: f64,
    n_replicates: usize,
    dt: f64,
    mean_tau: f64,
    seed: u64,
) -> Result<CycleCountDeviation> {
    ensure_positive(eps0, "eps0")?;
    if eps_bar.is_nan() || eps_bar <= 0.0 {
        return Err(Error::InvalidInput(format!("eps_bar must be > 0, got {eps_bar}")));
    }
    ensure_positive(mean_tau, "E[tau]")?;
    ensure_positive(dt, "dt")?;
    if horizon.is_nan() || horizon < 0.0 {
        return Err(Error::InvalidInput(format!("T must be >= 0, got {horizon}")));
    }
    if n_replicates == 0 {
        return Err(Error::InvalidInput("n_replicates must be positive".into()));
    }
    let rate = 1.0 / mean_tau;
    let interval = (horizon * (rate - eps_bar), horizon * (rate + eps_bar));
    let outside = |n: usize| {
        let n = n as f64;
        !(n > interval.0 && n < interval.1)
    };
    let n_steps = (horizon / dt).round() as usize;
    let hits: u64 = if n_steps == 0 {
        if outside(0) { n_replicates as u64 } else { 0 }
    } else {
        let kernel = OuKernel::new(params.gamma(), dt, 1.0, Scheme::Exact);
        (0..n_replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let mut stream = NoiseStream::new(seed, rep);
                let mut tracker = ExcursionTracker::new(eps0, params.p(), 0.0, dt, 0.0)
                    .expect("validated inputs");
                let mut x = 0.0;
                for _ in 0..n_steps {
                    x = kernel.step(x, stream.next_normal());
                    tracker.push(x);
                }
                u64::from(outside(tracker.n_cycles()))
            })
            .sum()
    };
    let n = n_replicates as u64;
    let p_hat = hits as f64 / n as f64;
    let (ci_low, ci_high) = wilson_interval(hits, n, Z95);
    let (log_rate, log_rate_se) = if hits > 0 {
        let se_p = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
        (p_hat.ln() / horizon, se_p / p_hat / horizon)
    } else {
        (ci_high.ln() / horizon, f64::INFINITY)
    };
    Ok(CycleCountDeviation {
        horizon,
        interval,
        n_replicates,
        hits,
        p_hat,
        ci_low,
        ci_high,
        log_rate,
        log_rate_se,
        upper_bound_only: hits == 0,
    })
}
