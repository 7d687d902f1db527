//! Randomized checks of the operator identities and estimates, and
//! empirical estimation of the constants that enter the smallness conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::control::{empirical_state_bound, ControlSignal};
use crate::error::{KfpError, Result};
use crate::evolution::{solve_linear, Feasibility, Scheme, TimeGrid, Trajectory};
use crate::field::SpectralField;
use crate::operators::Model;
use crate::scalar::{Complex, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `worst` is `max |lhs - rhs| / scale`.
    Identity,
    /// `worst` is `max lhs / rhs`.
    Inequality,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub samples: usize,
    pub worst: f64,
    /// Mean of the sampled ratios or residuals (tightness diagnostic).
    pub mean: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn from_values(name: &str, kind: CheckKind, values: &[f64], tolerance: f64) -> Self {
        let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let pass = worst.is_finite()
            && match kind {
                CheckKind::Identity => worst <= tolerance,
                CheckKind::Inequality => worst <= 1.0 + tolerance,
            };
        Self { name: name.to_string(), kind, samples: values.len(), worst, mean, tolerance, pass }
    }
}

fn ratio<T: Real>(lhs: T, rhs: T) -> f64 {
    let (l, r) = (lhs.as_f64(), rhs.as_f64());
    if l == 0.0 {
        0.0
    } else {
        l / r
    }
}

fn residual<T: Real>(a: T, b: T, scale: T) -> f64 {
    let s = scale.as_f64();
    let d = (a - b).abs().as_f64();
    if d == 0.0 {
        0.0
    } else {
        d / s
    }
}

fn require_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(KfpError::InvalidParameter { name: "samples", reason: "must be >= 1".into() });
    }
    Ok(())
}

/// Identities that hold exactly in the discrete setting.
pub fn check_identity_suite<T: Real>(model: &Model<T>, n_samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    require_samples(n_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.domain();
    let space = &model.space;
    let mut r_form = Vec::new();
    let mut grad_form = Vec::new();
    let mut dissipation = Vec::new();
    let mut raise = Vec::new();
    let mut r0_sym = Vec::new();
    let mut mass = Vec::new();
    let mut moments = Vec::new();
    for _ in 0..n_samples {
        let y = SpectralField::random(d, &mut rng, T::one());
        let z = SpectralField::random(d, &mut rng, T::one());
        let vv2 = y.norm_vv().powi(2);
        r_form.push(residual(y.apply_r().inner_y(&y), vv2, vv2));
        grad_form.push(residual(y.norm_y().powi(2) + y.grad_v_norm().powi(2), vv2, vv2));
        let g2 = y.grad_v_norm().powi(2);
        dissipation.push(residual(model.apply_a(&y).inner_y(&y), -g2, g2));
        let mut worst = 0.0f64;
        for i in 0..d.dim {
            let lhs = y.raise(i);
            let rhs = &y.d_v(i) - &y.mul_v(i);
            worst = worst.max(ratio((&lhs - &rhs).norm_y(), y.norm_vv()));
        }
        raise.push(worst);
        let a = model.apply_r0(&y).inner_y(&z);
        let b = y.inner_y(&model.apply_r0(&z));
        r0_sym.push(residual(a, b, y.norm_vv() * z.norm_vv()));
        let u = T::lit(rng.random_range(-1.0..1.0));
        let rhs = model.assemble_rhs(&y, u);
        mass.push(ratio(rhs.mass_mode().norm(), rhs.norm_y()));
        moments.push(moment_quadrature_gap(model, &y)?);
    }
    let one = SpectralField::constant(d, T::one());
    let n1 = model.apply_n(&one);
    let b = model.b();
    let n_one = residual((&n1 - b).norm_y(), T::zero(), b.norm_y().max(T::one()));
    let _ = space;
    Ok(vec![
        CheckResult::from_values("r-quadratic-form", CheckKind::Identity, &r_form, 1e-12),
        CheckResult::from_values("vv-gradient-form", CheckKind::Identity, &grad_form, 1e-12),
        CheckResult::from_values("dissipation", CheckKind::Identity, &dissipation, 1e-9),
        CheckResult::from_values("n-of-one-is-b", CheckKind::Identity, &[n_one], 1e-13),
        CheckResult::from_values("raise-identity", CheckKind::Identity, &raise, 1e-14),
        CheckResult::from_values("r0-self-adjoint", CheckKind::Identity, &r0_sym, 1e-12),
        CheckResult::from_values("mass-annihilation", CheckKind::Identity, &mass, 1e-13),
        CheckResult::from_values("moments-quadrature", CheckKind::Identity, &moments, 1e-10),
    ])
}

/// Relative gap between the slice moments and Gauss-Hermite quadrature of
/// the nodal phase-space values.
fn moment_quadrature_gap<T: Real>(model: &Model<T>, y: &SpectralField<T>) -> Result<f64> {
    let space = &model.space;
    let d = model.domain();
    let m = space.moments(y)?;
    let nodal = space.nodal_phase_space(y);
    let nq = space.basis.nodes.len();
    let mut worst = 0.0f64;
    for (n, row) in nodal.iter().enumerate() {
        let mut rho = Complex::<T>::default();
        let mut rv = [Complex::<T>::default(); 2];
        for (qv, val) in row.iter().enumerate() {
            let w = space.velocity_weight(qv);
            rho += val.scale(w);
            let q = if d.dim == 1 { [qv, 0] } else { [qv / nq, qv % nq] };
            for i in 0..d.dim {
                rv[i] += val.scale(w * space.basis.nodes[q[i]]);
            }
        }
        worst = worst.max((rho.re - m.rho[n]).abs().as_f64());
        for i in 0..d.dim {
            worst = worst.max((rv[i].re - m.rho_v[i][n]).abs().as_f64());
        }
    }
    Ok(worst / y.norm_y().as_f64().max(f64::MIN_POSITIVE))
}

fn nodal_sup<T: Real>(model: &Model<T>, c: &[Complex<T>]) -> T {
    model.space.to_nodal(c).iter().map(|z| z.norm()).fold(T::zero(), T::max)
}

/// Operator estimates, including the time-integrated Lipschitz forms on
/// synthetic trajectories with `traj_nodes` time nodes.
pub fn check_inequality_suite<T: Real>(model: &Model<T>, n_samples: usize, seed: u64) -> Result<Vec<CheckResult>> {
    require_samples(n_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.domain();
    let un = model.potential.norm_l2;
    let sd = T::of(d.dim).sqrt();
    let mut d_bound = Vec::new();
    let mut rho_bound = Vec::new();
    let mut rhov_bound = Vec::new();
    let mut sup_bound = Vec::new();
    let mut h1 = Vec::new();
    let mut h2 = Vec::new();
    for _ in 0..n_samples {
        let scale = T::lit(rng.random_range(0.1..2.0));
        let y = SpectralField::random(d, &mut rng, scale);
        let zs = T::lit(rng.random_range(0.1..2.0));
        let z = SpectralField::random(d, &mut rng, zs);
        d_bound.push(ratio(model.apply_d(&y).norm_y(), y.norm_y()));
        rho_bound.push(ratio(model.space.coeff_l2(y.slice(0)), y.norm_y()));
        let rv: T = (0..d.dim)
            .map(|i| model.space.coeff_l2(y.slice(d.unit_hermite(i))).powi(2))
            .sum::<T>()
            .sqrt();
        rhov_bound.push(ratio(rv, sd * y.norm_y()));
        sup_bound.push(ratio(nodal_sup(model, &model.density_field(&y)), un * y.norm_y()));
        let e = &y - &z;
        let l1 = (&model.apply_h1(&y) - &model.apply_h1(&z)).dual_norm_vv();
        let r1 = un * (y.norm_y() * e.norm_vv() + e.norm_y() * z.norm_vv());
        h1.push(ratio(l1, r1));
        let l2 = (&model.apply_h2(&y) - &model.apply_h2(&z)).dual_norm_vv();
        let r2 = sd * un * (y.norm_y() * e.norm_y() + e.norm_y() * z.norm_y());
        h2.push(ratio(l2, r2));
    }
    let mut out = vec![
        CheckResult::from_values("d-bound", CheckKind::Inequality, &d_bound, 1e-10),
        CheckResult::from_values("density-moment-bound", CheckKind::Inequality, &rho_bound, 1e-12),
        CheckResult::from_values("momentum-moment-bound", CheckKind::Inequality, &rhov_bound, 1e-12),
        CheckResult::from_values("convolution-sup-bound", CheckKind::Inequality, &sup_bound, 1e-10),
        CheckResult::from_values("h1-lipschitz", CheckKind::Inequality, &h1, 1e-8),
        CheckResult::from_values("h2-lipschitz", CheckKind::Inequality, &h2, 1e-8),
    ];
    out.extend(check_time_lipschitz(model, (n_samples / 10).max(1), 8, &mut rng)?);
    Ok(out)
}

fn random_trajectory<T: Real, R: Rng + ?Sized>(model: &Model<T>, nodes: usize, rng: &mut R) -> Result<Trajectory<T>> {
    let grid = TimeGrid::new(T::one(), nodes - 1)?;
    let amp = T::lit(rng.random_range(0.1..2.0));
    let states = (0..nodes)
        .map(|_| {
            let a = amp * T::lit(rng.random_range(0.2..1.0));
            SpectralField::random(model.domain(), rng, a)
        })
        .collect();
    Trajectory::from_states(grid, states)
}

/// Time-integrated Lipschitz estimates on random synthetic trajectories.
pub fn check_time_lipschitz<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    n_pairs: usize,
    nodes: usize,
    rng: &mut R,
) -> Result<Vec<CheckResult>> {
    require_samples(n_pairs)?;
    let un = model.potential.norm_l2;
    let sd = T::of(model.space.dim()).sqrt();
    let mut h1 = Vec::new();
    let mut h1_triple = Vec::new();
    let mut h2 = Vec::new();
    let mut h2_triple = Vec::new();
    for _ in 0..n_pairs {
        let y = random_trajectory(model, nodes.max(2), rng)?;
        let z = random_trajectory(model, nodes.max(2), rng)?;
        let e = Trajectory::from_states(
            y.grid,
            y.states.iter().zip(&z.states).map(|(a, b)| a - b).collect(),
        )?;
        let dt = y.grid.dt();
        let steps = y.grid.steps;
        let l2_dual = |f: &dyn Fn(&SpectralField<T>) -> SpectralField<T>| -> T {
            (dt * (0..steps)
                .map(|n| (&f(&y.states[n]) - &f(&z.states[n])).dual_norm_vv().powi(2))
                .sum::<T>())
            .sqrt()
        };
        let l2_y = |t: &Trajectory<T>| (dt * t.norm_y[..steps].iter().map(|v| *v * *v).sum::<T>()).sqrt();
        let lhs1 = l2_dual(&|s| model.apply_h1(s));
        let lhs2 = l2_dual(&|s| model.apply_h2(s));
        h1.push(ratio(lhs1, un * (y.linf_y() * e.l2_vv() + e.linf_y() * z.l2_vv())));
        h1_triple.push(ratio(lhs1, un * (y.triple_norm() + z.triple_norm()) * e.triple_norm()));
        h2.push(ratio(lhs2, sd * un * (y.linf_y() + z.linf_y()) * l2_y(&e)));
        h2_triple.push(ratio(lhs2, sd * un * (y.triple_norm() + z.triple_norm()) * e.triple_norm()));
    }
    Ok(vec![
        CheckResult::from_values("h1-lipschitz-time", CheckKind::Inequality, &h1, 1e-8),
        CheckResult::from_values("h1-lipschitz-triple", CheckKind::Inequality, &h1_triple, 1e-8),
        CheckResult::from_values("h2-lipschitz-time", CheckKind::Inequality, &h2, 1e-8),
        CheckResult::from_values("h2-lipschitz-triple", CheckKind::Inequality, &h2_triple, 1e-8),
    ])
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantsOptions {
    /// Linear solves per batch for the stability constant.
    pub batch_size: usize,
    pub batches: usize,
    pub n_norm_iter: usize,
    /// Forward runs for the state-bound surrogate.
    pub state_samples: usize,
    /// `|y0|_Y` and control bound used for the state-bound surrogate.
    pub state_y0: f64,
    pub state_u: f64,
    pub seed: u64,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        Self {
            batch_size: 50,
            batches: 2,
            n_norm_iter: 100,
            state_samples: 6,
            state_y0: 1e-2,
            state_u: 0.1,
            seed: 0,
        }
    }
}

/// Empirical constants; every entry is a randomized estimate, not a bound.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsTable {
    pub dim: usize,
    pub nx: usize,
    pub kv: usize,
    pub horizon: f64,
    pub steps: usize,
    pub potential_l1: f64,
    pub potential_l2: f64,
    pub alpha_l2: f64,
    pub alpha_linf: f64,
    /// Largest stability ratio per batch.
    pub c_hat_batches: Vec<f64>,
    pub c_hat: f64,
    pub c_hat_samples: usize,
    pub n_norm: f64,
    pub n_norm_iterations: usize,
    /// Uncontrolled small-data radius `3 / (32 sqrt(d) |U| C^2)`.
    pub mu: f64,
    /// `1 / (8 sqrt(d) |U| C)`.
    pub kappa_uncontrolled: f64,
    /// Controlled existence radius.
    pub kappa: f64,
    pub state_bound: f64,
    pub state_bound_y0: f64,
    pub state_bound_u: f64,
    pub state_bound_samples: usize,
}

/// Largest stability ratio of the linear solver over random data.
///
/// Sources are `g(t) = cos(omega t) G` with a random field `G` and random
/// frequency; the split between initial datum and source is random.
pub fn sample_stability_ratio<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    grid: &TimeGrid<T>,
    samples: usize,
    rng: &mut R,
) -> Result<T> {
    let d = model.domain();
    let mut worst = T::zero();
    for _ in 0..samples {
        let w = rng.random_range(0.0..1.0);
        let y0 = SpectralField::random(d, rng, T::lit(w));
        let g = SpectralField::random(d, rng, T::lit(1.0 - w));
        let omega = T::lit(rng.random_range(0.0..6.0));
        let s = solve_linear(model, &y0, grid, Scheme::ImexEuler, |n| g.scaled((omega * grid.time(n)).cos()))?;
        worst = worst.max(s.stability_ratio);
    }
    Ok(worst)
}

pub fn estimate_constants<T: Real>(model: &Model<T>, grid: &TimeGrid<T>, opts: &ConstantsOptions) -> Result<ConstantsTable> {
    require_samples(opts.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = model.domain();
    let linear = model.clone().with_terms(crate::operators::Terms { nonlinear: false, control: false, ..model.terms });
    let mut batches = Vec::new();
    for _ in 0..opts.batches.max(1) {
        batches.push(sample_stability_ratio(&linear, grid, opts.batch_size, &mut rng)?);
    }
    let c_hat = batches.iter().copied().fold(T::zero(), T::max);
    let n_est = model.estimate_n_norm(&mut rng, opts.n_norm_iter, T::lit(1e-10))?;
    let zero_u = ControlSignal::zeros(grid, -T::lit(opts.state_u), T::lit(opts.state_u))?;
    let feas = Feasibility::evaluate(model, T::zero(), &zero_u, c_hat, n_est.value);
    let state_bound = empirical_state_bound(model, grid, T::lit(opts.state_y0), T::lit(opts.state_u), opts.state_samples, &mut rng)?;
    Ok(ConstantsTable {
        dim: d.dim,
        nx: d.nx,
        kv: d.kv,
        horizon: grid.horizon.as_f64(),
        steps: grid.steps,
        potential_l1: model.potential.norm_l1.as_f64(),
        potential_l2: model.potential.norm_l2.as_f64(),
        alpha_l2: model.alpha.norm_l2.as_f64(),
        alpha_linf: model.alpha.norm_linf.as_f64(),
        c_hat_batches: batches.iter().map(|c| c.as_f64()).collect(),
        c_hat: c_hat.as_f64(),
        c_hat_samples: opts.batch_size * opts.batches.max(1),
        n_norm: n_est.value.as_f64(),
        n_norm_iterations: n_est.iterations,
        mu: feas.mu.as_f64(),
        kappa_uncontrolled: feas.kappa_uncontrolled.as_f64(),
        kappa: feas.kappa.as_f64(),
        state_bound: state_bound.as_f64(),
        state_bound_y0: opts.state_y0,
        state_bound_u: opts.state_u,
        state_bound_samples: opts.state_samples,
    })
}

/// Plain-text summary, one line per check.
pub fn summarize(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let what = match r.kind {
            CheckKind::Identity => "residual",
            CheckKind::Inequality => "ratio",
        };
        s.push_str(&format!(
            "{:<24} {:<4} samples={:<5} worst {}={:.3e} mean={:.3e} tol={:.0e}\n",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.samples,
            what,
            r.worst,
            r.mean,
            r.tolerance
        ));
    }
    s
}
