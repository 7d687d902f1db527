//! Tracking control: cost, exact discrete gradient, projected gradient descent.
//!
//! The discrete problem is
//!
//! ```text
//! J(u) = 1/2 sum_{n=1..Nt} dt |y_n - yd_n|_{V_v}^2 + beta/2 sum_{n<Nt} dt u_n^2
//! y_{n+1} = S (y_n + dt F(y_n, u_n)),   S = implicit resolvent
//! ```
//!
//! and its gradient is obtained by the reverse sweep of that recursion.

use rand::Rng;
use serde::Serialize;

use crate::error::{KfpError, Result};
use crate::evolution::{direct_march, implicit_solve_adjoint, TimeGrid, Trajectory};
use crate::field::SpectralField;
use crate::operators::Model;
use crate::scalar::Real;

/// Piecewise-constant control on the cells of a [`TimeGrid`] with box bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal<T> {
    pub values: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub dt: T,
}

impl<T: Real> ControlSignal<T> {
    pub fn new(grid: &TimeGrid<T>, values: Vec<T>, lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let n = grid.steps;
        if values.len() != n || lower.len() != n || upper.len() != n {
            return Err(KfpError::InvalidParameter {
                name: "control",
                reason: format!("expected {n} cells, got {}/{}/{}", values.len(), lower.len(), upper.len()),
            });
        }
        for c in 0..n {
            let (lo, hi, v) = (lower[c], upper[c], values[c]);
            if !(lo <= T::zero() && T::zero() <= hi) {
                return Err(KfpError::InvalidParameter {
                    name: "control.bounds",
                    reason: format!("cell {c}: need u_min <= 0 <= u_max, got [{lo}, {hi}]"),
                });
            }
            if !(lo <= v && v <= hi) {
                return Err(KfpError::InvalidParameter {
                    name: "control.values",
                    reason: format!("cell {c}: {v} outside [{lo}, {hi}]"),
                });
            }
        }
        Ok(Self { values, lower, upper, dt: grid.dt() })
    }

    pub fn constant(grid: &TimeGrid<T>, value: T, lower: T, upper: T) -> Result<Self> {
        let n = grid.steps;
        Self::new(grid, vec![value; n], vec![lower; n], vec![upper; n])
    }

    pub fn zeros(grid: &TimeGrid<T>, lower: T, upper: T) -> Result<Self> {
        Self::constant(grid, T::zero(), lower, upper)
    }

    /// Same bounds, new values (clipped into the box).
    pub fn with_values(&self, values: &[T]) -> Self {
        let mut out = self.clone();
        out.values = self.project(values);
        out
    }

    pub fn check_grid(&self, grid: &TimeGrid<T>) -> Result<()> {
        if self.values.len() != grid.steps || (self.dt - grid.dt()).abs() > T::epsilon() * grid.dt() * T::lit(16.0) {
            return Err(KfpError::InvalidParameter {
                name: "control",
                reason: format!("{} cells with dt {} vs grid {} steps dt {}", self.values.len(), self.dt, grid.steps, grid.dt()),
            });
        }
        Ok(())
    }

    /// Clip `values` into the box.
    pub fn project(&self, values: &[T]) -> Vec<T> {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.max(lo).min(hi))
            .collect()
    }

    /// `int u^2 dt`.
    pub fn integral_sq(&self) -> T {
        self.dt * self.values.iter().map(|v| *v * *v).sum::<T>()
    }

    pub fn norm_l2(&self) -> T {
        self.integral_sq().sqrt()
    }

    /// `max(|u_min|_inf, |u_max|_inf)`.
    pub fn bound_sup(&self) -> T {
        self.lower.iter().chain(&self.upper).map(|v| v.abs()).fold(T::zero(), T::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostBreakdown<T> {
    pub tracking: T,
    pub penalty: T,
    pub total: T,
    /// The forward solve blew up; `total` is then infinite.
    pub blown_up: bool,
}

impl<T: Real> CostBreakdown<T> {
    fn infinite() -> Self {
        Self { tracking: T::infinity(), penalty: T::infinity(), total: T::infinity(), blown_up: true }
    }
}

/// Tracking problem data shared by cost, gradient and optimizer.
#[derive(Clone, Debug)]
pub struct TrackingProblem<'a, T: Real> {
    pub model: &'a Model<T>,
    pub y0: &'a SpectralField<T>,
    pub target: &'a Trajectory<T>,
    pub beta: T,
}

#[derive(Clone, Debug)]
pub struct CostEvaluation<T> {
    pub cost: CostBreakdown<T>,
    /// Forward states, absent after a blow-up.
    pub trajectory: Option<Trajectory<T>>,
}

impl<'a, T: Real> TrackingProblem<'a, T> {
    pub fn new(model: &'a Model<T>, y0: &'a SpectralField<T>, target: &'a Trajectory<T>, beta: T) -> Result<Self> {
        if !(beta > T::zero()) {
            return Err(KfpError::InvalidParameter { name: "beta", reason: format!("must be positive, got {beta}") });
        }
        model.space.check(y0)?;
        target.grid.validate()?;
        if let Some(s) = target.states.first() {
            model.space.check(s)?;
        }
        Ok(Self { model, y0, target, beta })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.target.grid
    }

    /// Cost of an already computed forward trajectory.
    pub fn cost_of(&self, u: &ControlSignal<T>, traj: &Trajectory<T>) -> CostBreakdown<T> {
        let dt = self.grid().dt();
        let tracking = T::lit(0.5)
            * dt
            * (1..=self.grid().steps)
                .map(|n| (&traj.states[n] - &self.target.states[n]).norm_vv().powi(2))
                .sum::<T>();
        let penalty = T::lit(0.5) * self.beta * u.integral_sq();
        CostBreakdown { tracking, penalty, total: tracking + penalty, blown_up: false }
    }

    pub fn evaluate(&self, u: &ControlSignal<T>) -> Result<CostEvaluation<T>> {
        u.check_grid(self.grid())?;
        match direct_march(self.model, self.y0, u, self.grid()) {
            Ok(traj) => Ok(CostEvaluation { cost: self.cost_of(u, &traj), trajectory: Some(traj) }),
            Err(KfpError::BlowUp { .. }) => Ok(CostEvaluation { cost: CostBreakdown::infinite(), trajectory: None }),
            Err(e) => Err(e),
        }
    }

    /// `dJ/du_n` for every cell, by the reverse sweep around stored forward states.
    pub fn gradient_from(&self, u: &ControlSignal<T>, forward: &Trajectory<T>) -> Result<Vec<T>> {
        let grid = self.grid();
        if forward.states.len() != grid.steps + 1 {
            return Err(KfpError::MissingForwardStates);
        }
        u.check_grid(grid)?;
        let m = self.model;
        let dt = grid.dt();
        let residual = |n: usize| (&forward.states[n] - &self.target.states[n]).apply_r();
        let mut grad = vec![T::zero(); grid.steps];
        let mut p = residual(grid.steps).scaled(dt);
        for n in (0..grid.steps).rev() {
            let y = &forward.states[n];
            let q = implicit_solve_adjoint(m, &p, dt);
            let un = u.values[n];
            grad[n] = self.beta * dt * un;
            if m.terms.control {
                let mut c = m.apply_n(y);
                c += m.b();
                grad[n] += dt * c.inner_y(&q);
            }
            let mut next = q.clone();
            if m.terms.coupling {
                next.axpy(dt, &m.apply_d_adjoint(&q));
            }
            if m.terms.nonlinear {
                next.axpy(-dt, &m.h1_adjoint(y, &q));
                next.axpy(-dt, &m.h2_adjoint(y, &q));
            }
            if m.terms.control && un != T::zero() {
                next.axpy(dt * un, &m.apply_n_adjoint(&q));
            }
            if n >= 1 {
                next.axpy(dt, &residual(n));
            }
            p = next;
        }
        Ok(grad)
    }

    pub fn gradient(&self, u: &ControlSignal<T>) -> Result<Vec<T>> {
        let eval = self.evaluate(u)?;
        let traj = eval.trajectory.ok_or(KfpError::BlowUp {
            step: 0,
            norm: f64::INFINITY,
            limit: f64::INFINITY,
        })?;
        self.gradient_from(u, &traj)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DescentOptions<T> {
    pub max_iter: usize,
    /// Stationarity tolerance, scaled by `1 + |J|`.
    pub tol: T,
    /// Trial step for the first iteration; later trials use Barzilai-Borwein.
    pub initial_step: T,
    pub armijo: T,
    pub max_halvings: usize,
}

impl<T: Real> Default for DescentOptions<T> {
    fn default() -> Self {
        Self { max_iter: 200, tol: T::lit(1e-6), initial_step: T::one(), armijo: T::lit(1e-4), max_halvings: 40 }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DescentLogEntry<T> {
    pub iter: usize,
    pub cost: T,
    pub tracking: T,
    pub penalty: T,
    pub step_size: T,
    pub stationarity: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentStatus {
    Stationary,
    MaxIterations,
    /// Line search failed after the allowed halvings.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct DescentResult<T> {
    pub control: ControlSignal<T>,
    pub cost: CostBreakdown<T>,
    pub log: Vec<DescentLogEntry<T>>,
    pub status: DescentStatus,
}

fn l2_dot<T: Real>(dt: T, a: &[T], b: &[T]) -> T {
    dt * a.iter().zip(b).map(|(x, y)| *x * *y).sum::<T>()
}

/// Projected gradient on the `L^2(0,T)` gradient with monotone Armijo backtracking.
pub fn projected_gradient_descent<T: Real>(
    problem: &TrackingProblem<'_, T>,
    u0: &ControlSignal<T>,
    opts: &DescentOptions<T>,
) -> Result<DescentResult<T>> {
    let dt = problem.grid().dt();
    let mut u = u0.with_values(&u0.values);
    if u != *u0 {
        return Err(KfpError::InvalidParameter { name: "u0", reason: "initial control is not admissible".into() });
    }
    let eval = problem.evaluate(&u)?;
    let mut cost = eval.cost;
    let mut traj = eval.trajectory.ok_or(KfpError::BlowUp { step: 0, norm: f64::INFINITY, limit: f64::INFINITY })?;
    let riesz = |g: Vec<T>| g.into_iter().map(|v| v / dt).collect::<Vec<T>>();
    let mut g = riesz(problem.gradient_from(&u, &traj)?);
    let mut log = Vec::new();
    let mut step = opts.initial_step;
    let mut prev: Option<(Vec<T>, Vec<T>)> = None;
    let mut status = DescentStatus::MaxIterations;
    for iter in 0..=opts.max_iter {
        let trial_full: Vec<T> = u.values.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let proj = u.project(&trial_full);
        let diff: Vec<T> = u.values.iter().zip(&proj).map(|(a, b)| *a - *b).collect();
        let stationarity = l2_dot(dt, &diff, &diff).sqrt();
        log.push(DescentLogEntry {
            iter,
            cost: cost.total,
            tracking: cost.tracking,
            penalty: cost.penalty,
            step_size: if iter == 0 { T::zero() } else { step },
            stationarity,
        });
        if stationarity < opts.tol * (T::one() + cost.total.abs()) {
            status = DescentStatus::Stationary;
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        if let Some((du, dg)) = &prev {
            let sy = l2_dot(dt, du, dg);
            if sy > T::zero() {
                step = l2_dot(dt, du, du) / sy;
            }
        }
        let mut accepted = None;
        let mut s = step;
        for _ in 0..=opts.max_halvings {
            let raw: Vec<T> = u.values.iter().zip(&g).map(|(a, b)| *a - s * *b).collect();
            let cand = u.with_values(&raw);
            let delta: Vec<T> = cand.values.iter().zip(&u.values).map(|(a, b)| *a - *b).collect();
            let decrease = l2_dot(dt, &g, &delta);
            let e = problem.evaluate(&cand)?;
            if !e.cost.blown_up && e.cost.total <= cost.total + opts.armijo * decrease {
                accepted = Some((cand, e, delta));
                break;
            }
            s *= T::lit(0.5);
        }
        let Some((cand, e, delta)) = accepted else {
            status = DescentStatus::Stalled;
            break;
        };
        step = s;
        u = cand;
        cost = e.cost;
        traj = e.trajectory.expect("finite cost has states");
        let g_new = riesz(problem.gradient_from(&u, &traj)?);
        let dg: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        prev = Some((delta, dg));
        g = g_new;
    }
    Ok(DescentResult { control: u, cost, log, status })
}

/// Empirical stand-in for the state bound `C(k0, k1, k2)`: the largest
/// `|y|_{L^inf(0,T;Y)}` over sampled data with `|y0|_Y = k0` and `|u| <= k1`.
/// Zero data give zero. A blow-up in any sample gives infinity.
pub fn empirical_state_bound<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    grid: &TimeGrid<T>,
    k0: T,
    k1: T,
    samples: usize,
    rng: &mut R,
) -> Result<T> {
    let mut worst = T::zero();
    let d = model.domain();
    for s in 0..samples.max(1) {
        let y0 = SpectralField::random(d, rng, k0);
        let values: Vec<T> = (0..grid.steps)
            .map(|_| match s % 3 {
                0 => k1,
                1 => -k1,
                _ => k1 * T::lit(rng.random_range(-1.0..=1.0)),
            })
            .collect();
        let u = ControlSignal::new(grid, values, vec![-k1; grid.steps], vec![k1; grid.steps])?;
        match direct_march(model, &y0, &u, grid) {
            Ok(t) => worst = worst.max(t.linf_y()),
            Err(KfpError::BlowUp { .. }) => return Ok(T::infinity()),
            Err(e) => return Err(e),
        }
    }
    Ok(worst)
}

/// Inputs of the state-uniqueness conditions for an optimal pair.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CertificateInputs<T> {
    pub dim: usize,
    pub y0_norm: T,
    /// `max(|u_min|_inf, |u_max|_inf)`.
    pub u_inf: T,
    /// `|y_d|_{L^2(0,T;V_v)}`.
    pub target_norm: T,
    pub c_hat: T,
    /// Existence radius of the controlled fixed point.
    pub kappa: T,
    pub n_norm: T,
    pub potential_l2: T,
    /// Empirical `C(|y0|, u_inf, kappa + 2 |y_d|)`.
    pub state_bound: T,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct UniquenessCertificate<T> {
    pub inputs: CertificateInputs<T>,
    /// `3 / (32 sqrt(d) |U| C^2)`.
    pub mu: T,
    pub initial_small: bool,
    pub bounds_small: bool,
    /// `8 d C^2 |U|^2 (1 + |N|)(2 |y_d| + kappa) C(..)`, must be `<= 1/2`.
    pub nonlinear_lhs: T,
    pub nonlinear_ok: bool,
    /// `4 sqrt(d) C^2 |U| (1 + |N|)(|y0| + (2 |y_d| + kappa) u_inf |N|)`, must be `< 1/2`.
    pub control_lhs: T,
    pub control_ok: bool,
    pub holds: bool,
}

impl<T: Real> UniquenessCertificate<T> {
    pub fn evaluate(inputs: CertificateInputs<T>) -> Self {
        let d = T::of(inputs.dim);
        let sd = d.sqrt();
        let c2 = inputs.c_hat * inputs.c_hat;
        let un = inputs.potential_l2;
        let mu = T::lit(3.0) / (T::lit(32.0) * sd * un * c2);
        let initial_small = inputs.y0_norm <= mu;
        let bounds_small = inputs.u_inf <= T::one();
        let spread = T::lit(2.0) * inputs.target_norm + inputs.kappa;
        let one_n = T::one() + inputs.n_norm;
        let nonlinear_lhs = if inputs.state_bound == T::zero() {
            T::zero()
        } else {
            T::lit(8.0) * d * c2 * un * un * one_n * spread * inputs.state_bound
        };
        let control_lhs = T::lit(4.0) * sd * c2 * un * one_n * (inputs.y0_norm + spread * inputs.u_inf * inputs.n_norm);
        let half = T::lit(0.5);
        let nonlinear_ok = nonlinear_lhs <= half;
        let control_ok = control_lhs < half;
        Self {
            inputs,
            mu,
            initial_small,
            bounds_small,
            nonlinear_lhs,
            nonlinear_ok,
            control_lhs,
            control_ok,
            holds: initial_small && bounds_small && nonlinear_ok && control_ok,
        }
    }

    /// Names of the violated conditions.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.initial_small {
            v.push("initial-datum");
        }
        if !self.bounds_small {
            v.push("control-bounds");
        }
        if !self.nonlinear_ok {
            v.push("nonlinear-smallness");
        }
        if !self.control_ok {
            v.push("control-smallness");
        }
        v
    }
}
