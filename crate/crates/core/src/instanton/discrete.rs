//! The discretized variational problem on a uniform grid.
//!
//! The staggered action `(dt/2) sum_k r_k^2`, `r_k = a phi_k + b phi_{k+1}` with
//! `a = gamma/2 - 1/dt`, `b = gamma/2 + 1/dt`, is a quadratic form whose
//! Hessian over the free nodes `1..=n` is tridiagonal and positive definite.
//! It is factored once and used as the descent preconditioner.

use crate::ou::{midpoint_action, PowerObservable, TimeGrid};
use crate::stats::CompensatedSum;

use super::ConstraintKind;

/// Thomas-algorithm factorization of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    // kept for the matrix-vector product used in tests
    #[cfg_attr(not(test), allow(dead_code))]
    diag: Vec<f64>,
    off: Vec<f64>,
    // forward-elimination multipliers and pivots
    mult: Vec<f64>,
    pivot: Vec<f64>,
}

impl Tridiagonal {
    pub(crate) fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        let n = diag.len();
        let mut pivot = vec![0.0; n];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        pivot[0] = diag[0];
        for i in 1..n {
            mult[i - 1] = off[i - 1] / pivot[i - 1];
            pivot[i] = diag[i] - mult[i - 1] * off[i - 1];
        }
        Self { diag, off, mult, pivot }
    }

    pub(crate) fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.pivot.len();
        out[0] = rhs[0];
        for i in 1..n {
            out[i] = rhs[i] - self.mult[i - 1] * out[i - 1];
        }
        out[n - 1] /= self.pivot[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = (out[i] - self.off[i] * out[i + 1]) / self.pivot[i];
        }
    }

    #[cfg(test)]
    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.diag.len();
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            out[i] = v;
        }
    }
}

/// Grid, dynamics and constraint of one finite-horizon problem.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteProblem {
    pub grid: TimeGrid,
    pub gamma: f64,
    pub obs: PowerObservable,
    pub kind: ConstraintKind,
    pub x0: f64,
    pub a: f64,
    pub b: f64,
    pub precond: Tridiagonal,
}

impl DiscreteProblem {
    pub(crate) fn new(grid: TimeGrid, gamma: f64, p: f64, kind: ConstraintKind, x0: f64) -> Self {
        let dt = grid.dt;
        let a = 0.5 * gamma - 1.0 / dt;
        let b = 0.5 * gamma + 1.0 / dt;
        let n = grid.n_steps;
        let mut diag = vec![dt * (a * a + b * b); n];
        diag[n - 1] = dt * b * b;
        let off = vec![dt * a * b; n.saturating_sub(1)];
        Self {
            grid,
            gamma,
            obs: PowerObservable::new(p),
            kind,
            x0,
            a,
            b,
            precond: Tridiagonal::new(diag, off),
        }
    }

    pub(crate) fn n_free(&self) -> usize {
        self.grid.n_steps
    }

    pub(crate) fn p(&self) -> f64 {
        self.obs.p()
    }

    /// Trapezoid weight of node `k`.
    pub(crate) fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.grid.n_steps {
            0.5 * self.grid.dt
        } else {
            self.grid.dt
        }
    }

    /// Full path `x0, free...`.
    pub(crate) fn assemble(&self, free: &[f64], scale: f64) -> Vec<f64> {
        let mut phi = Vec::with_capacity(free.len() + 1);
        phi.push(self.x0);
        phi.extend(free.iter().map(|v| scale * v));
        phi
    }

    pub(crate) fn action(&self, phi: &[f64]) -> f64 {
        midpoint_action(phi, self.grid.dt, self.gamma)
    }

    /// Gradient of the action with respect to the free nodes.
    pub(crate) fn action_gradient(&self, phi: &[f64], out: &mut [f64]) {
        let dt = self.grid.dt;
        let n = self.grid.n_steps;
        let r = |k: usize| self.a * phi[k] + self.b * phi[k + 1];
        for j in 1..=n {
            let mut g = dt * self.b * r(j - 1);
            if j < n {
                g += dt * self.a * r(j);
            }
            out[j - 1] = g;
        }
    }

    pub(crate) fn constraint_term(&self, x: f64) -> f64 {
        match self.kind {
            ConstraintKind::Absolute => self.obs.abs_pow(x),
            ConstraintKind::Signed => self.obs.signed(x),
        }
    }

    /// Derivative of the pointwise constraint integrand.
    pub(crate) fn constraint_term_derivative(&self, x: f64) -> f64 {
        let p = self.p();
        let mag = self.obs.abs_pow(x) / x.abs().max(1e-12) * p;
        let mag = if x == 0.0 { 0.0 } else { mag };
        match self.kind {
            ConstraintKind::Absolute => mag * x.signum(),
            ConstraintKind::Signed => mag,
        }
    }

    /// Constraint value over the free nodes only (node 0 excluded).
    pub(crate) fn free_constraint(&self, free: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (j, &v) in free.iter().enumerate() {
            acc.add(self.weight(j + 1) * self.constraint_term(v));
        }
        acc.value()
    }

    pub(crate) fn free_constraint_gradient(&self, free: &[f64], out: &mut [f64]) {
        for (j, &v) in free.iter().enumerate() {
            out[j] = self.weight(j + 1) * self.constraint_term_derivative(v);
        }
    }

    /// Contribution of the fixed boundary node to the constraint.
    pub(crate) fn boundary_constraint(&self) -> f64 {
        self.weight(0) * self.constraint_term(self.x0)
    }

    /// Discrete Euler-Lagrange residual `(grad A - lambda grad C)_j / w_j` over
    /// interior nodes, sup-norm.
    pub(crate) fn stationarity_residual(&self, phi: &[f64], lambda: f64) -> f64 {
        let n = self.grid.n_steps;
        let mut ga = vec![0.0; n];
        self.action_gradient(phi, &mut ga);
        let mut worst: f64 = 0.0;
        for j in 1..n {
            let gc = self.weight(j) * self.constraint_term_derivative(phi[j]);
            worst = worst.max(((ga[j - 1] - lambda * gc) / self.weight(j)).abs());
        }
        worst
    }

    /// Residual of `phi'' - gamma^2 phi + lambda C'(phi)` with the standard
    /// three-point second difference, sup-norm over interior nodes.
    pub(crate) fn continuum_residual(&self, phi: &[f64], lambda: f64) -> f64 {
        let dt = self.grid.dt;
        let g2 = self.gamma * self.gamma;
        (1..self.grid.n_steps)
            .map(|k| {
                let lap = (phi[k + 1] - 2.0 * phi[k] + phi[k - 1]) / (dt * dt);
                (lap - g2 * phi[k] + lambda * self.constraint_term_derivative(phi[k])).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(n: usize) -> DiscreteProblem {
        DiscreteProblem::new(TimeGrid::over(3.0, n).unwrap(), 1.3, 4.0, ConstraintKind::Absolute, 0.0)
    }

    #[test]
    fn tridiagonal_solve_inverts_apply() {
        let pb = problem(50);
        let x: Vec<f64> = (0..50).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let mut y = vec![0.0; 50];
        pb.precond.apply(&x, &mut y);
        let mut back = vec![0.0; 50];
        pb.precond.solve(&y, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn preconditioner_is_the_action_hessian() {
        // A(phi) = (1/2) phi^T K phi over free nodes when phi_0 = 0
        let pb = problem(40);
        let free: Vec<f64> = (1..=40).map(|k| (k as f64 * 0.3).sin()).collect();
        let phi = pb.assemble(&free, 1.0);
        let mut kx = vec![0.0; 40];
        pb.precond.apply(&free, &mut kx);
        let quad: f64 = 0.5 * free.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>();
        assert!((quad - pb.action(&phi)).abs() < 1e-10 * quad);
        let mut g = vec![0.0; 40];
        pb.action_gradient(&phi, &mut g);
        for (a, b) in g.iter().zip(&kx) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pb = DiscreteProblem::new(TimeGrid::over(2.0, 20).unwrap(), 0.7, 3.0, ConstraintKind::Signed, 0.3);
        let free: Vec<f64> = (1..=20).map(|k| (k as f64 * 0.4).sin() - 0.2).collect();
        let phi = pb.assemble(&free, 1.0);
        let mut ga = vec![0.0; 20];
        pb.action_gradient(&phi, &mut ga);
        let mut gc = vec![0.0; 20];
        pb.free_constraint_gradient(&free, &mut gc);
        let h = 1e-6;
        for j in 0..20 {
            let mut up = free.clone();
            let mut dn = free.clone();
            up[j] += h;
            dn[j] -= h;
            let fa = (pb.action(&pb.assemble(&up, 1.0)) - pb.action(&pb.assemble(&dn, 1.0))) / (2.0 * h);
            let fc = (pb.free_constraint(&up) - pb.free_constraint(&dn)) / (2.0 * h);
            assert!((fa - ga[j]).abs() < 1e-5 * (1.0 + fa.abs()), "action {j}");
            assert!((fc - gc[j]).abs() < 1e-7 * (1.0 + fc.abs()), "constraint {j}");
        }
    }
}
