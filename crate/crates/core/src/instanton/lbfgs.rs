//! Preconditioned limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

pub(crate) trait Objective {
    fn dim(&self) -> usize;
    /// Objective value, writing the gradient; `None` outside the domain.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
    /// Applies the inverse preconditioner.
    fn precondition(&self, v: &[f64], out: &mut [f64]);
    /// Problem-specific stationarity measure used as the stopping rule.
    fn stationarity(&self, x: &[f64], grad: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LbfgsReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

pub(crate) fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, opts: LbfgsOptions) -> Option<LbfgsReport> {
    let n = obj.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g)?;
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut stall = 0usize;
    let mut iterations = 0usize;

    loop {
        let stat = obj.stationarity(&x, &g);
        if stat <= opts.tol {
            return Some(LbfgsReport { x, iterations, converged: true });
        }
        if iterations >= opts.max_iter || stall >= 8 {
            return Some(LbfgsReport { x, iterations, converged: false });
        }
        iterations += 1;

        // two-loop recursion
        q.copy_from_slice(&g);
        for (i, pair) in history.iter().enumerate().rev() {
            alpha[i] = pair.rho * dot(&pair.s, &q);
            q.iter_mut().zip(&pair.y).for_each(|(qv, yv)| *qv -= alpha[i] * yv);
        }
        obj.precondition(&q, &mut dir);
        if let Some(last) = history.back() {
            let mut py = vec![0.0; n];
            obj.precondition(&last.y, &mut py);
            let scale = dot(&last.s, &last.y) / dot(&last.y, &py);
            if scale.is_finite() && scale > 0.0 {
                dir.iter_mut().for_each(|d| *d *= scale);
            }
        }
        for (i, pair) in history.iter().enumerate() {
            let beta = pair.rho * dot(&pair.y, &dir);
            dir.iter_mut().zip(&pair.s).for_each(|(d, s)| *d += s * (alpha[i] - beta));
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            obj.precondition(&g, &mut dir);
            dir.iter_mut().for_each(|d| *d = -*d);
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                stall = usize::MAX;
                continue;
            }
        }

        // weak Wolfe bracketing
        let mut t = 1.0;
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut accepted = None;
        let mut armijo_ok: Option<f64> = None;
        for _ in 0..60 {
            x_new.iter_mut().zip(x.iter().zip(&dir)).for_each(|(xn, (xv, d))| *xn = xv + t * d);
            match obj.value_grad(&x_new, &mut g_new) {
                Some(fv) if fv.is_finite() && fv <= f + 1e-4 * t * slope => {
                    if dot(&g_new, &dir) < 0.9 * slope {
                        armijo_ok = Some(t);
                        lo = t;
                        t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
                    } else {
                        accepted = Some(fv);
                        break;
                    }
                }
                _ => {
                    hi = t;
                    t = 0.5 * (lo + hi);
                }
            }
        }
        if accepted.is_none() {
            if let Some(t) = armijo_ok {
                x_new.iter_mut().zip(x.iter().zip(&dir)).for_each(|(xn, (xv, d))| *xn = xv + t * d);
                accepted = obj.value_grad(&x_new, &mut g_new);
            }
        }
        let Some(f_new) = accepted else {
            if history.is_empty() {
                stall = usize::MAX;
            } else {
                history.clear();
                stall += 1;
            }
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        if (f - f_new).abs() <= 1e-15 * f.abs().max(1e-300) {
            stall += 1;
        } else {
            stall = 0;
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Some((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        }
        fn precondition(&self, v: &[f64], out: &mut [f64]) {
            out.copy_from_slice(v);
        }
        fn stationarity(&self, _x: &[f64], g: &[f64]) -> f64 {
            g.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions { memory: 8, max_iter: 500, tol: 1e-10 };
        let r = minimize(&Rosenbrock, vec![-1.2, 1.0], opts).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }
}
