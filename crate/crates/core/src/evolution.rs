//! Time marching for `y_t = (A + D) y + g` and the nonlinear controlled equation.
//!
//! Every step applies the resolvent of the velocity-local part of `A`
//! implicitly. With `A = -sum_i L_i`, `L_i = K_i + i xi_i J_i`, where `K_i`
//! multiplies by `k_i` and `J_i` is the `v_i` ladder, each `(I + c L_i)` is a
//! complex-symmetric tridiagonal matrix along Hermite direction `i` with
//! positive definite Hermitian part. The factors commute and are solved line
//! by line with the Thomas algorithm. `D`, the nonlinear terms and the
//! sources are explicit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::ControlSignal;
use crate::error::{KfpError, Result};
use crate::field::SpectralField;
use crate::operators::Model;
use crate::scalar::{Complex, Real};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid<T> {
    /// Horizon `T`.
    pub horizon: T,
    /// Number of steps `Nt`.
    pub steps: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        let g = Self { horizon, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > T::zero()) || !self.horizon.is_finite() {
            return Err(KfpError::InvalidParameter { name: "time.horizon", reason: format!("{}", self.horizon) });
        }
        if self.steps == 0 {
            return Err(KfpError::InvalidParameter { name: "time.steps", reason: "must be >= 1".into() });
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.horizon / T::of(self.steps)
    }

    #[inline]
    pub fn time(&self, n: usize) -> T {
        self.dt() * T::of(n)
    }
}

/// States at the `Nt + 1` time nodes with their norm histories.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub grid: TimeGrid<T>,
    pub states: Vec<SpectralField<T>>,
    pub norm_y: Vec<T>,
    pub norm_vv: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn from_states(grid: TimeGrid<T>, states: Vec<SpectralField<T>>) -> Result<Self> {
        if states.len() != grid.steps + 1 {
            return Err(KfpError::InvalidParameter {
                name: "trajectory",
                reason: format!("{} states for {} steps", states.len(), grid.steps),
            });
        }
        let norm_y = states.iter().map(|s| s.norm_y()).collect();
        let norm_vv = states.iter().map(|s| s.norm_vv()).collect();
        Ok(Self { grid, states, norm_y, norm_vv })
    }

    pub fn zeros(grid: TimeGrid<T>, like: &SpectralField<T>) -> Self {
        let z = SpectralField::zeros(like.domain);
        Self::from_states(grid, vec![z; grid.steps + 1]).expect("consistent length")
    }

    pub fn final_state(&self) -> &SpectralField<T> {
        self.states.last().expect("non-empty")
    }

    /// `|y|_{L^2(0,T;V_v)}` with left-endpoint rectangles.
    pub fn l2_vv(&self) -> T {
        let dt = self.grid.dt();
        (dt * self.norm_vv[..self.grid.steps].iter().map(|v| *v * *v).sum::<T>()).sqrt()
    }

    /// `|y|_{L^inf(0,T;Y)}` as the maximum over nodes.
    pub fn linf_y(&self) -> T {
        self.norm_y.iter().copied().fold(T::zero(), T::max)
    }

    pub fn triple_norm(&self) -> T {
        self.l2_vv() + self.linf_y()
    }

    /// `|||self - other|||`.
    pub fn distance(&self, other: &Self) -> T {
        let dt = self.grid.dt();
        let mut l2 = T::zero();
        let mut linf = T::zero();
        for (n, (a, b)) in self.states.iter().zip(&other.states).enumerate() {
            let e = a - b;
            if n < self.grid.steps {
                l2 += dt * e.norm_vv().powi(2);
            }
            linf = linf.max(e.norm_y());
        }
        l2.sqrt() + linf
    }

    /// `max_n |self_n - other_n|_Y`.
    pub fn max_gap_y(&self, other: &Self) -> T {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).norm_y())
            .fold(T::zero(), T::max)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Backward Euler on the velocity-local part, forward Euler on the rest.
    #[default]
    ImexEuler,
    /// Crank-Nicolson on the velocity-local part, Heun on `D`, midpoint source.
    CrankNicolson,
}

/// Explicit-transport stability heuristic `dt (pi Nx / 2L) sqrt(Kv)`.
///
/// Transport is inside the implicit solve here, so values above one are
/// reported but do not limit stability.
pub fn cfl_number<T: Real>(model: &Model<T>, dt: T) -> T {
    let d = model.domain();
    dt * T::PI() * T::of(d.nx) / (T::lit(2.0) * d.half_width) * T::of(d.kv).sqrt()
}

/// Solve `(I + c L_i) z = r` along every Hermite line of direction `i`, in place.
/// `sign = -1` solves with the adjoint matrix.
fn tridiagonal_solve<T: Real>(model: &Model<T>, r: &mut SpectralField<T>, c: T, i: usize, sign: T) {
    let d = model.domain();
    let nf = d.n_fourier();
    let m = d.modes_per_dim();
    let stride = d.hermite_stride(i);
    let bases: Vec<usize> = if d.dim == 1 {
        vec![0]
    } else if i == 0 {
        (0..m).collect()
    } else {
        (0..m).map(|k1| k1 * m).collect()
    };
    let sq = &model.space.basis.sqrt_k;
    let mut cp = vec![Complex::<T>::default(); m];
    let mut dp = vec![Complex::<T>::default(); m];
    for jf in 0..nf {
        let xi = sign * model.space.xi(jf)[i];
        // off-diagonal between k and k+1: i c xi sqrt(k+1)
        let off = |k: usize| Complex::new(T::zero(), c * xi * sq[k + 1]);
        for &base in &bases {
            let idx = |k: usize| (base + k * stride) * nf + jf;
            // forward sweep
            let b0 = Complex::new(T::one(), T::zero());
            cp[0] = if m > 1 { off(0) / b0 } else { Complex::default() };
            dp[0] = r.coeffs[idx(0)] / b0;
            for k in 1..m {
                let a = off(k - 1);
                let b = Complex::new(T::one() + c * T::of(k), T::zero());
                let den = b - a * cp[k - 1];
                cp[k] = if k + 1 < m { off(k) / den } else { Complex::default() };
                dp[k] = (r.coeffs[idx(k)] - a * dp[k - 1]) / den;
            }
            r.coeffs[idx(m - 1)] = dp[m - 1];
            for k in (0..m - 1).rev() {
                let next = r.coeffs[idx(k + 1)];
                r.coeffs[idx(k)] = dp[k] - cp[k] * next;
            }
        }
    }
}

/// `prod_i (I + c L_i)^{-1} r`.
pub fn implicit_solve<T: Real>(model: &Model<T>, r: &SpectralField<T>, c: T) -> SpectralField<T> {
    let mut out = r.clone();
    for i in 0..model.space.dim() {
        tridiagonal_solve(model, &mut out, c, i, T::one());
    }
    out
}

/// Adjoint of [`implicit_solve`] in `Y`.
pub fn implicit_solve_adjoint<T: Real>(model: &Model<T>, r: &SpectralField<T>, c: T) -> SpectralField<T> {
    let mut out = r.clone();
    for i in 0..model.space.dim() {
        tridiagonal_solve(model, &mut out, c, i, -T::one());
    }
    out
}

/// `prod_i (I - c L_i) y`.
fn explicit_half<T: Real>(model: &Model<T>, y: &SpectralField<T>, c: T) -> SpectralField<T> {
    let d = model.domain();
    let nf = d.n_fourier();
    let mut out = y.clone();
    for i in 0..d.dim {
        let mut next = out.clone();
        // -c K_i out
        for kf in 0..d.n_hermite() {
            let ki = T::of(d.hermite_index(kf)[i]);
            for (n, o) in next.coeffs[kf * nf..(kf + 1) * nf].iter_mut().zip(&out.coeffs[kf * nf..(kf + 1) * nf]) {
                *n -= o.scale(c * ki);
            }
        }
        // -c i xi J_i out = c * transport_i(out)
        next.axpy(c, &model.apply_transport_dir(&out, i));
        out = next;
    }
    out
}

/// One step of `y_t = (A + D) y + g` with `D` enabled by `model.terms.coupling`.
///
/// For [`Scheme::CrankNicolson`] `g` is the midpoint source.
pub fn linear_step<T: Real>(model: &Model<T>, y: &SpectralField<T>, g: &SpectralField<T>, dt: T, scheme: Scheme) -> SpectralField<T> {
    match scheme {
        Scheme::ImexEuler => {
            let mut r = y.clone();
            if model.terms.coupling {
                r.axpy(dt, &model.apply_d(y));
            }
            r.axpy(dt, g);
            implicit_solve(model, &r, dt)
        }
        Scheme::CrankNicolson => {
            let half = dt * T::lit(0.5);
            let mut r = explicit_half(model, y, half);
            r.axpy(dt, g);
            if model.terms.coupling {
                let dy = model.apply_d(y);
                let mut pred = r.clone();
                pred.axpy(dt, &dy);
                let pred = implicit_solve(model, &pred, half);
                r.axpy(half, &dy);
                r.axpy(half, &model.apply_d(&pred));
            }
            implicit_solve(model, &r, half)
        }
    }
}

/// Output of [`solve_linear`].
#[derive(Clone, Debug)]
pub struct LinearSolve<T> {
    pub trajectory: Trajectory<T>,
    /// `|g|_{L^2(0,T;V_v')}`.
    pub source_norm: T,
    /// `|||y||| / (|y0|_Y + |g|_{L^2(0,T;V_v')})`, or zero for zero data.
    pub stability_ratio: T,
    pub cfl: T,
}

fn blowup_limit<T: Real>(y0: &SpectralField<T>) -> T {
    T::lit(1e6) * y0.norm_y().max(T::one())
}

fn guard<T: Real>(y: &SpectralField<T>, step: usize, limit: T) -> Result<()> {
    let n = y.norm_y();
    if !n.is_finite() || n > limit {
        return Err(KfpError::BlowUp { step, norm: n.as_f64(), limit: limit.as_f64() });
    }
    Ok(())
}

/// March `y_t = (A + D) y + g(t)` over `grid`; `source(n)` is `g` at node `n`.
pub fn solve_linear<T: Real>(
    model: &Model<T>,
    y0: &SpectralField<T>,
    grid: &TimeGrid<T>,
    scheme: Scheme,
    source: impl Fn(usize) -> SpectralField<T>,
) -> Result<LinearSolve<T>> {
    model.space.check(y0)?;
    grid.validate()?;
    let dt = grid.dt();
    let cfl = cfl_number(model, dt);
    if cfl > T::one() {
        log::debug!("explicit-transport CFL number {cfl:.3} > 1 (transport is implicit here)");
    }
    let limit = blowup_limit(y0);
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(y0.clone());
    let mut g_now = source(0);
    let mut source_sq = T::zero();
    for n in 0..grid.steps {
        source_sq += dt * g_now.dual_norm_vv().powi(2);
        let y = &states[n];
        let next = match scheme {
            Scheme::ImexEuler => {
                let next = linear_step(model, y, &g_now, dt, scheme);
                if n + 1 < grid.steps {
                    g_now = source(n + 1);
                }
                next
            }
            Scheme::CrankNicolson => {
                let g_next = source(n + 1);
                let mut mid = g_now.clone();
                mid += &g_next;
                mid.scale(T::lit(0.5));
                g_now = g_next;
                linear_step(model, y, &mid, dt, scheme)
            }
        };
        guard(&next, n + 1, limit)?;
        states.push(next);
    }
    let trajectory = Trajectory::from_states(*grid, states)?;
    let source_norm = source_sq.sqrt();
    let data = y0.norm_y() + source_norm;
    let stability_ratio = if data > T::zero() { trajectory.triple_norm() / data } else { T::zero() };
    Ok(LinearSolve { trajectory, source_norm, stability_ratio, cfl })
}

/// `-h1(z) - h2(z) + u (N z + B)` with the enabled terms.
fn frozen_source<T: Real>(model: &Model<T>, z: &SpectralField<T>, u: T) -> SpectralField<T> {
    let mut g = model.space.zeros();
    if model.terms.nonlinear {
        g -= &model.apply_h1(z);
        g -= &model.apply_h2(z);
    }
    if model.terms.control && u != T::zero() {
        let mut c = model.apply_n(z);
        c += model.b();
        g.axpy(u, &c);
    }
    g
}

/// Single nonlinear IMEX-Euler march with all nonlinear terms at the current state.
pub fn direct_march<T: Real>(model: &Model<T>, y0: &SpectralField<T>, u: &ControlSignal<T>, grid: &TimeGrid<T>) -> Result<Trajectory<T>> {
    model.space.check(y0)?;
    grid.validate()?;
    u.check_grid(grid)?;
    let dt = grid.dt();
    let limit = blowup_limit(y0);
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(y0.clone());
    for n in 0..grid.steps {
        let y = &states[n];
        let mut r = y.clone();
        r.axpy(dt, &model.explicit_part(y, u.values[n]));
        let next = implicit_solve(model, &r, dt);
        guard(&next, n + 1, limit)?;
        states.push(next);
    }
    Trajectory::from_states(*grid, states)
}

#[derive(Clone, Copy, Debug)]
pub struct PicardOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Precomputed `|N|_{L(Y,V_v')}`; estimated by power iteration when absent.
    pub n_norm: Option<T>,
}

impl<T: Real> Default for PicardOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-9), max_iter: 50, n_norm: None }
    }
}

/// Smallness thresholds of the fixed-point construction, evaluated with
/// empirical constants.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Feasibility<T> {
    /// Empirical stability constant (largest ratio seen over the linear solves).
    pub c_hat: T,
    pub u_norm_l2: T,
    pub n_norm: T,
    pub potential_l2: T,
    /// `3 / (32 sqrt(d) |U| C^2)`, the uncontrolled small-data radius.
    pub mu: T,
    /// `1 / (8 sqrt(d) |U| C)`.
    pub kappa_uncontrolled: T,
    /// `min((C (4 sqrt(d) |U| + 1))^{-1}, (16 sqrt(d) |U| C)^{-1})`.
    pub kappa: T,
    /// `|y0|_Y + |B u|_{L^2(0,T;Y)} + |N|^2 |u|^2 / 2`.
    pub data_size: T,
    /// `kappa / (2 C)`.
    pub data_limit: T,
    /// `C |u|_{L^2} |N|`, must stay below 3/4.
    pub contraction: T,
    pub small_data: bool,
    pub contractive: bool,
    /// Both conditions hold (with empirical constants).
    pub certified: bool,
}

impl<T: Real> Feasibility<T> {
    pub fn evaluate(model: &Model<T>, y0_norm: T, u: &ControlSignal<T>, c_hat: T, n_norm: T) -> Self {
        let sd = T::of(model.space.dim()).sqrt();
        let un = model.potential.norm_l2;
        let u_norm_l2 = u.norm_l2();
        let inv = |x: T| if x > T::zero() { T::one() / x } else { T::infinity() };
        let mu = T::lit(3.0) * inv(T::lit(32.0) * sd * un * c_hat * c_hat);
        let kappa_uncontrolled = inv(T::lit(8.0) * sd * un * c_hat);
        let kappa = inv(c_hat * (T::lit(4.0) * sd * un + T::one())).min(inv(T::lit(16.0) * sd * un * c_hat));
        let b_norm = if model.terms.control { model.b().norm_y() } else { T::zero() };
        let n_eff = if model.terms.control { n_norm } else { T::zero() };
        let data_size = y0_norm + b_norm * u_norm_l2 + T::lit(0.5) * n_eff * n_eff * u_norm_l2 * u_norm_l2;
        let data_limit = kappa * inv(T::lit(2.0) * c_hat);
        let contraction = c_hat * u_norm_l2 * n_eff;
        let small_data = data_size <= data_limit;
        let contractive = contraction < T::lit(0.75);
        Self {
            c_hat,
            u_norm_l2,
            n_norm: n_eff,
            potential_l2: un,
            mu,
            kappa_uncontrolled,
            kappa,
            data_size,
            data_limit,
            contraction,
            small_data,
            contractive,
            certified: small_data && contractive,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PicardReport<T> {
    pub iterates: usize,
    /// `|||y_{m+1} - y_m|||`, starting from the zero trajectory.
    pub residuals: Vec<T>,
    /// Largest ratio of successive residuals; `0` with fewer than two residuals.
    pub observed_rate: T,
    pub converged: bool,
    pub feasibility: Feasibility<T>,
}

/// Fixed-point iteration `z -> y_z`, where `y_z` solves the linear equation
/// with the frozen source `-h1(z) - h2(z) + u N z + u B`.
///
/// The fixed point of the discrete map is the [`direct_march`] trajectory.
pub fn picard_solve<T: Real>(
    model: &Model<T>,
    y0: &SpectralField<T>,
    u: &ControlSignal<T>,
    grid: &TimeGrid<T>,
    opts: &PicardOptions<T>,
) -> Result<(Trajectory<T>, PicardReport<T>)> {
    if !(opts.tol > T::zero()) {
        return Err(KfpError::InvalidParameter { name: "picard.tol", reason: format!("{}", opts.tol) });
    }
    model.space.check(y0)?;
    u.check_grid(grid)?;
    let mut z = Trajectory::zeros(*grid, y0);
    let mut best: Option<(T, Trajectory<T>)> = None;
    let mut residuals = Vec::new();
    let mut c_hat = T::zero();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let solve = solve_linear(model, y0, grid, Scheme::ImexEuler, |n| {
            let un = if n < grid.steps { u.values[n] } else { T::zero() };
            frozen_source(model, &z.states[n], un)
        })?;
        c_hat = c_hat.max(solve.stability_ratio);
        let y = solve.trajectory;
        let r = y.distance(&z);
        residuals.push(r);
        let better = best.as_ref().is_none_or(|(b, _)| r < *b);
        z = y;
        if better {
            best = Some((r, z.clone()));
        }
        if r < opts.tol {
            converged = true;
            break;
        }
    }
    let observed_rate = residuals
        .windows(2)
        .filter(|w| w[0] > T::zero())
        .map(|w| w[1] / w[0])
        .fold(T::zero(), T::max);
    let n_norm = match opts.n_norm {
        Some(v) => v,
        None if model.terms.control => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            model.estimate_n_norm(&mut rng, 100, T::lit(1e-8))?.value
        }
        None => T::zero(),
    };
    let feasibility = Feasibility::evaluate(model, y0.norm_y(), u, c_hat, n_norm);
    let trajectory = if converged { z } else { best.map(|(_, t)| t).unwrap_or(z) };
    if !converged {
        log::warn!("Picard iteration did not reach tol {} in {} iterations", opts.tol, opts.max_iter);
    }
    let report = PicardReport { iterates: residuals.len(), residuals, observed_rate, converged, feasibility };
    Ok((trajectory, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::operators::Terms;
    use crate::potential::{ControlShape, PotentialKind, PotentialSpec};
    use crate::space::Space;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn model(dim: usize, nx: usize, kv: usize) -> Model<f64> {
        let space = Space::new(DomainSpec::new(dim, PI, nx, kv).unwrap()).unwrap();
        let u = PotentialSpec::new(&space, PotentialKind::WrappedGaussian { sigma: 0.6 }).unwrap();
        let a = ControlShape::gaussian_bump(&space, 0.8, 1.0, [1.0, 0.0]).unwrap();
        Model::new(space, u, a)
    }

    /// Dense `(I + c L)` applied to `z`, built from the operator calls.
    fn apply_shifted(m: &Model<f64>, z: &SpectralField<f64>, c: f64) -> SpectralField<f64> {
        let mut out = z.clone();
        out.axpy(-c, &m.apply_a(z));
        out
    }

    #[test]
    fn implicit_solve_inverts_backward_euler_in_1d() {
        let m = model(1, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = SpectralField::random(m.domain(), &mut rng, 1.0);
        let z = implicit_solve(&m, &r, 0.37);
        assert!((&apply_shifted(&m, &z, 0.37) - &r).norm_y() < 1e-13);
        // adjoint
        let q = SpectralField::random(m.domain(), &mut rng, 1.0);
        let a = implicit_solve(&m, &r, 0.2).inner_y(&q);
        let b = r.inner_y(&implicit_solve_adjoint(&m, &q, 0.2));
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn implicit_solve_factors_in_2d() {
        let m = model(2, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = SpectralField::random(m.domain(), &mut rng, 1.0);
        let c = 0.1;
        let z = implicit_solve(&m, &r, c);
        // (I + c L_1)(I + c L_2) z = r  <=>  (I - c A) z + c^2 L_1 L_2 z = r
        let l = |y: &SpectralField<f64>, i: usize| {
            let mut out = y.clone();
            let d = m.domain();
            let nf = d.n_fourier();
            for kf in 0..d.n_hermite() {
                let ki = d.hermite_index(kf)[i] as f64;
                for p in 0..nf {
                    out.coeffs[kf * nf + p] = y.coeffs[kf * nf + p] * ki;
                }
            }
            &out - &m.apply_transport_dir(y, i)
        };
        let mut lhs = apply_shifted(&m, &z, c);
        lhs.axpy(c * c, &l(&l(&z, 1), 0));
        assert!((&lhs - &r).norm_y() < 1e-12);
        let q = SpectralField::random(m.domain(), &mut rng, 1.0);
        let a = implicit_solve(&m, &r, c).inner_y(&q);
        let b = r.inner_y(&implicit_solve_adjoint(&m, &q, c));
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn x_independent_modes_decay_by_the_implicit_factor() {
        let m = model(1, 16, 6).with_terms(Terms { coupling: false, nonlinear: false, control: false });
        let h = SpectralField::mode(m.domain(), [0, 0], [4, 0], Complex::new(1.0, 0.0));
        let zero = m.space.zeros();
        let next = linear_step(&m, &h, &zero, 0.1, Scheme::ImexEuler);
        assert!((&next - &h.scaled(1.0 / 1.4)).norm_y() < 1e-15);
    }

    #[test]
    fn one_step_from_rest_with_b_source() {
        let m = model(1, 16, 6).with_terms(Terms::linear());
        let zero = m.space.zeros();
        let dt = 0.05;
        let next = linear_step(&m, &zero, m.b(), dt, Scheme::ImexEuler);
        // (I - dt A) next = dt B exactly
        let resid = &apply_shifted(&m, &next, dt) - &m.b().scaled(dt);
        assert!(resid.norm_y() < 1e-14);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let m = model(1, 16, 6);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let zero = m.space.zeros();
        let s = solve_linear(&m, &zero, &grid, Scheme::ImexEuler, |_| zero.clone()).unwrap();
        assert_eq!(s.trajectory.triple_norm(), 0.0);
        assert_eq!(s.stability_ratio, 0.0);
        let u = ControlSignal::zeros(&grid, -1.0, 1.0).unwrap();
        let t = direct_march(&m, &zero, &u, &grid).unwrap();
        assert_eq!(t.triple_norm(), 0.0);
    }

    #[test]
    fn contraction_without_coupling() {
        let m = model(1, 32, 10).with_terms(Terms { coupling: false, nonlinear: false, control: false });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y0 = SpectralField::random(m.domain(), &mut rng, 0.01);
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let zero = m.space.zeros();
        let s = solve_linear(&m, &y0, &grid, Scheme::ImexEuler, |_| zero.clone()).unwrap();
        for w in s.trajectory.norm_y.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
    }

    #[test]
    fn mass_mode_is_constant() {
        let m = model(1, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut y0 = SpectralField::random(m.domain(), &mut rng, 0.05);
        y0.coeffs[0] = Complex::new(0.02, 0.0);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let u = ControlSignal::constant(&grid, 0.3, -1.0, 1.0).unwrap();
        let t = direct_march(&m, &y0, &u, &grid).unwrap();
        for s in &t.states {
            assert!((s.mass_mode() - y0.mass_mode()).norm() < 1e-15);
        }
    }

    #[test]
    fn blow_up_is_caught() {
        let m = model(1, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y0 = SpectralField::random(m.domain(), &mut rng, 1e3);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::zeros(&grid, -1.0, 1.0).unwrap();
        assert!(matches!(direct_march(&m, &y0, &u, &grid), Err(KfpError::BlowUp { .. })));
    }

    #[test]
    fn picard_trivial_cases() {
        let m = model(1, 16, 6);
        let grid = TimeGrid::new(0.5, 20).unwrap();
        let zero = m.space.zeros();
        let u = ControlSignal::zeros(&grid, -1.0, 1.0).unwrap();
        let (t, rep) = picard_solve(&m, &zero, &u, &grid, &PicardOptions::default()).unwrap();
        assert_eq!(rep.iterates, 1);
        assert!(rep.converged);
        assert_eq!(t.triple_norm(), 0.0);

        let lin = m.clone().with_terms(Terms::linear());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y0 = SpectralField::random(m.domain(), &mut rng, 0.1);
        let (t, rep) = picard_solve(&lin, &y0, &u, &grid, &PicardOptions::default()).unwrap();
        assert!(rep.converged && rep.iterates <= 2);
        let s = solve_linear(&lin, &y0, &grid, Scheme::ImexEuler, |_| zero.clone()).unwrap();
        assert!(t.max_gap_y(&s.trajectory) < 1e-14);
    }

    #[test]
    fn crank_nicolson_reduces_to_cayley_without_coupling() {
        let m = model(1, 16, 6).with_terms(Terms { coupling: false, nonlinear: false, control: false });
        let h = SpectralField::mode(m.domain(), [0, 0], [2, 0], Complex::new(1.0, 0.0));
        let zero = m.space.zeros();
        let next = linear_step(&m, &h, &zero, 0.1, Scheme::CrankNicolson);
        assert!((&next - &h.scaled(0.9 / 1.1)).norm_y() < 1e-15);
    }
}
