//! Euler-Maruyama simulation of the interacting particle system and its
//! comparison against the kinetic equation.
//!
//! Each particle follows
//!
//! ```text
//! dx_i = v_i dt
//! dv_i = w sum_j U(x_j - x_i) (v_j - v_i) dt - u alpha(x_i) dt
//!        + sqrt(2 w sum_j U(x_j - x_i)) dW_i,      w = |Omega| / m
//! ```
//!
//! With the weight `w` the empirical measure approximates `f` normalized as
//! `f = mu (1 + y)`, i.e. with spatial density close to one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::ControlSignal;
use crate::error::{KfpError, Result};
use crate::evolution::{TimeGrid, Trajectory};
use crate::field::SpectralField;
use crate::hermite::hermite_values;
use crate::operators::Model;
use crate::potential::{ControlShape, PotentialSpec};
use crate::scalar::Real;
use crate::space::Space;

/// Words of the ChaCha stream reserved per particle and step.
const WORDS_PER_PARTICLE: u128 = 256;
/// Words reserved per particle for initial sampling.
const WORDS_PER_SAMPLE: u128 = 1 << 16;
const INIT_STREAM: u64 = u64::MAX;
const CHUNK: usize = 4096;

/// Particle positions and velocities together with the counters that key
/// the noise streams.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub half_width: f64,
    pub x: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    pub seed: u64,
    pub replicate: u64,
    /// Number of steps taken so far; selects the noise stream.
    pub step: u64,
}

fn stream_rng(seed: u64, replicate: u64, stream: u64, word: u128) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng.set_word_pos(word);
    rng
}

fn wrap(x: f64, half: f64) -> f64 {
    let p = 2.0 * half;
    let mut y = (x + half).rem_euclid(p) - half;
    if y >= half {
        y -= p;
    }
    y
}

impl ParticleEnsemble {
    pub fn new(dim: usize, half_width: f64, x: Vec<[f64; 2]>, v: Vec<[f64; 2]>, seed: u64, replicate: u64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(KfpError::InvalidDomain(format!("d must be 1 or 2, got {dim}")));
        }
        if x.len() != v.len() {
            return Err(KfpError::InvalidParameter {
                name: "particles",
                reason: format!("{} positions but {} velocities", x.len(), v.len()),
            });
        }
        let mut ens = Self { dim, half_width, x, v, seed, replicate, step: 0 };
        ens.wrap_positions();
        if !ens.is_finite() {
            return Err(KfpError::InvalidParameter { name: "particles", reason: "non-finite state".into() });
        }
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Torus volume `(2L)^d`.
    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|p| p[0].is_finite() && p[1].is_finite())
    }

    fn wrap_positions(&mut self) {
        let (d, l) = (self.dim, self.half_width);
        for p in &mut self.x {
            for c in p.iter_mut().take(d) {
                *c = wrap(*c, l);
            }
        }
    }

    /// Draws `m` particles from `f0 = mu (1 + y0)` by rejection: positions
    /// uniform, velocities standard normal, accepted with probability
    /// `(1 + y0) / M`.
    ///
    /// `M` and the positivity check use the spatial nodes crossed with the
    /// Gauss-Hermite velocity nodes inside `|v_i| <= 6`.
    pub fn sample<T: Real>(space: &Space<T>, y0: &SpectralField<T>, m: usize, seed: u64, replicate: u64) -> Result<Self> {
        space.check(y0)?;
        let d = &space.domain;
        let dim = d.dim;
        let half = d.half_width.as_f64();
        let nq = space.basis.nodes.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in space.nodal_phase_space(y0) {
            for (qv, val) in row.iter().enumerate() {
                let q = if dim == 1 { [qv, 0] } else { [qv / nq, qv % nq] };
                if (0..dim).any(|i| space.basis.nodes[q[i]].as_f64().abs() > 6.0) {
                    continue;
                }
                let f = 1.0 + val.re.as_f64();
                lo = lo.min(f);
                hi = hi.max(f);
            }
        }
        if lo < 0.0 {
            return Err(KfpError::NegativeDensity { min: lo });
        }
        let envelope = 1.05 * hi;
        let eval = PointEvaluator::new(space, y0);
        let drawn: Vec<([f64; 2], [f64; 2])> = (0..m)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream_rng(seed, replicate, INIT_STREAM, p as u128 * WORDS_PER_SAMPLE);
                loop {
                    let mut x = [0.0; 2];
                    let mut v = [0.0; 2];
                    for i in 0..dim {
                        x[i] = rng.random_range(-half..half);
                        v[i] = rng.sample(StandardNormal);
                    }
                    let f = 1.0 + eval.value(x, v);
                    if rng.random::<f64>() * envelope < f {
                        return (x, v);
                    }
                }
            })
            .collect();
        let (x, v) = drawn.into_iter().unzip();
        Self::new(dim, half, x, v, seed, replicate)
    }
}

/// Sparse pointwise evaluation of a spectral field at arbitrary `(x, v)`.
struct PointEvaluator {
    dim: usize,
    kv: usize,
    /// `(wavevector, hermite multi-index, re, im)` for nonzero coefficients.
    terms: Vec<([f64; 2], [usize; 2], f64, f64)>,
}

impl PointEvaluator {
    fn new<T: Real>(space: &Space<T>, y: &SpectralField<T>) -> Self {
        let d = &space.domain;
        let nf = d.n_fourier();
        let mut terms = Vec::new();
        for kf in 0..d.n_hermite() {
            for jf in 0..nf {
                let c = y.coeffs[kf * nf + jf];
                if c.norm_sqr() == T::zero() {
                    continue;
                }
                let j = d.fourier_index(jf);
                let xi = [d.wavenumber(j[0]).as_f64(), if d.dim == 2 { d.wavenumber(j[1]).as_f64() } else { 0.0 }];
                terms.push((xi, d.hermite_index(kf), c.re.as_f64(), c.im.as_f64()));
            }
        }
        Self { dim: d.dim, kv: d.kv, terms }
    }

    fn value(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        let h: Vec<Vec<f64>> = (0..self.dim).map(|i| hermite_values(self.kv, v[i])).collect();
        self.terms
            .iter()
            .map(|(xi, k, re, im)| {
                let phase = xi[0] * x[0] + xi[1] * x[1];
                let mut hv = h[0][k[0]];
                if self.dim == 2 {
                    hv *= h[1][k[1]];
                }
                (re * phase.cos() - im * phase.sin()) * hv
            })
            .sum()
    }
}

/// How pair sums `sum_j U(x_i - x_j) (1, v_j)` are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Fourier series when the kernel has one, otherwise direct.
    #[default]
    Auto,
    /// All pairs with the one-shell periodized potential, `O(m^2)`.
    Direct,
    /// Truncated Fourier series of the periodized potential, `O(m M^d)`.
    Spectral,
}

/// Pair-interaction evaluator built from a sampled potential.
#[derive(Clone, Debug)]
pub struct ParticleKernel {
    dim: usize,
    half_width: f64,
    /// One-shell periodized values use the potential normalization `renorm`.
    direct: DirectKernel,
    /// `(l, coefficient)` with coefficients of the series in `exp(i pi l.x / L)`.
    series: Option<Vec<([isize; 2], f64)>>,
}

#[derive(Clone, Debug)]
struct DirectKernel {
    kind: crate::potential::PotentialKind,
    renorm: f64,
}

impl ParticleKernel {
    /// `tol` is the relative truncation level of the series.
    pub fn new<T: Real>(space: &Space<T>, potential: &PotentialSpec<T>, mode: KernelMode, tol: f64) -> Result<Self> {
        let d = &space.domain;
        let series = match mode {
            KernelMode::Direct => None,
            KernelMode::Auto | KernelMode::Spectral => match potential.series_cutoff(tol) {
                Some(mmax) => {
                    let mm = mmax as isize;
                    let mut out = Vec::new();
                    let l2: Vec<isize> = if d.dim == 2 { (-mm..=mm).collect() } else { vec![0] };
                    for l0 in -mm..=mm {
                        for &l1 in &l2 {
                            let l = [l0, l1];
                            if let Some(c) = potential.series_coefficient(l) {
                                out.push((l, c));
                            }
                        }
                    }
                    Some(out)
                }
                None if mode == KernelMode::Spectral => {
                    return Err(KfpError::InvalidParameter {
                        name: "kernel",
                        reason: format!("{:?} has no closed-form Fourier series", potential.kind),
                    })
                }
                None => None,
            },
        };
        Ok(Self {
            dim: d.dim,
            half_width: d.half_width.as_f64(),
            direct: DirectKernel { kind: potential.kind, renorm: potential.renorm },
            series,
        })
    }

    pub fn is_spectral(&self) -> bool {
        self.series.is_some()
    }

    /// `U_per(dx)` with `dx` reduced to the minimal image first.
    pub fn value(&self, dx: [f64; 2]) -> f64 {
        let l = self.half_width;
        let p = 2.0 * l;
        let a = [wrap(dx[0], l), wrap(dx[1], l)];
        let mut s = 0.0;
        if self.dim == 1 {
            for z in -1..=1 {
                s += self.direct.kind.profile((a[0] + p * z as f64).abs(), 1);
            }
        } else {
            for z1 in -1..=1 {
                for z2 in -1..=1 {
                    let b0 = a[0] + p * z1 as f64;
                    let b1 = a[1] + p * z2 as f64;
                    s += self.direct.kind.profile((b0 * b0 + b1 * b1).sqrt(), 2);
                }
            }
        }
        self.direct.renorm * s
    }

    /// For every particle, `(sum_j U(x_i - x_j), sum_j U(x_i - x_j) v_j)`.
    pub fn pair_sums(&self, x: &[[f64; 2]], v: &[[f64; 2]]) -> Vec<(f64, [f64; 2])> {
        match &self.series {
            Some(series) => self.series_sums(series, x, v),
            None => x
                .par_iter()
                .map(|xi| {
                    let mut a = 0.0;
                    let mut mv = [0.0; 2];
                    for (xj, vj) in x.iter().zip(v) {
                        let u = self.value([xj[0] - xi[0], xj[1] - xi[1]]);
                        a += u;
                        mv[0] += u * vj[0];
                        mv[1] += u * vj[1];
                    }
                    (a, mv)
                })
                .collect(),
        }
    }

    /// `exp(i pi l.x / L)` for every series mode, by powers of the base phases.
    fn phases(&self, series: &[([isize; 2], f64)], x: &[f64; 2], pw: &mut [Vec<(f64, f64)>; 2], out: &mut Vec<(f64, f64)>) {
        let k = std::f64::consts::PI / self.half_width;
        let mm = (pw[0].len() - 1) / 2;
        for (i, p) in pw.iter_mut().enumerate().take(self.dim) {
            let (sn, cs) = (k * x[i]).sin_cos();
            p[mm] = (1.0, 0.0);
            for l in 1..=mm {
                let (a, b) = p[mm + l - 1];
                p[mm + l] = (a * cs - b * sn, a * sn + b * cs);
                p[mm - l] = (p[mm + l].0, -p[mm + l].1);
            }
        }
        out.clear();
        for (l, _) in series {
            let (a, b) = pw[0][(l[0] + mm as isize) as usize];
            if self.dim == 1 {
                out.push((a, b));
            } else {
                let (c, d) = pw[1][(l[1] + mm as isize) as usize];
                out.push((a * c - b * d, a * d + b * c));
            }
        }
    }

    fn series_sums(&self, series: &[([isize; 2], f64)], x: &[[f64; 2]], v: &[[f64; 2]]) -> Vec<(f64, [f64; 2])> {
        let nm = series.len();
        let mm = series.iter().map(|(l, _)| l[0].unsigned_abs()).max().unwrap_or(0);
        let scratch = || ([vec![(0.0, 0.0); 2 * mm + 1], vec![(0.0, 0.0); 2 * mm + 1]], Vec::with_capacity(nm));
        // Structure factors sum_j exp(-i xi_l x_j) (1, v_j), reduced in a fixed order.
        let partial: Vec<Vec<[f64; 6]>> = x
            .par_chunks(CHUNK)
            .zip(v.par_chunks(CHUNK))
            .map(|(xc, vc)| {
                let (mut pw, mut ph) = scratch();
                let mut s = vec![[0.0; 6]; nm];
                for (xj, vj) in xc.iter().zip(vc) {
                    self.phases(series, xj, &mut pw, &mut ph);
                    for (sl, &(re, im)) in s.iter_mut().zip(&ph) {
                        let im = -im;
                        sl[0] += re;
                        sl[1] += im;
                        sl[2] += re * vj[0];
                        sl[3] += im * vj[0];
                        sl[4] += re * vj[1];
                        sl[5] += im * vj[1];
                    }
                }
                s
            })
            .collect();
        let mut total = vec![[0.0; 6]; nm];
        for s in &partial {
            for (t, p) in total.iter_mut().zip(s) {
                for q in 0..6 {
                    t[q] += p[q];
                }
            }
        }
        x.par_chunks(CHUNK)
            .flat_map_iter(|xc| {
                let (mut pw, mut ph) = scratch();
                xc.iter()
                    .map(|xi| {
                        self.phases(series, xi, &mut pw, &mut ph);
                        let mut a = 0.0;
                        let mut mv = [0.0; 2];
                        for ((t, (_, c)), &(cs, sn)) in total.iter().zip(series).zip(&ph) {
                            a += c * (cs * t[0] - sn * t[1]);
                            mv[0] += c * (cs * t[2] - sn * t[3]);
                            mv[1] += c * (cs * t[4] - sn * t[5]);
                        }
                        (a, mv)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// One Euler-Maruyama step with constant control `u` over `dt`.
pub fn particle_step<T: Real>(
    ens: &ParticleEnsemble,
    u: f64,
    dt: f64,
    kernel: &ParticleKernel,
    space: &Space<T>,
    alpha: &ControlShape<T>,
    noise_on: bool,
) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(KfpError::InvalidParameter { name: "dt", reason: format!("must be positive, got {dt}") });
    }
    let m = ens.len();
    if m == 0 {
        let mut out = ens.clone();
        out.step += 1;
        return Ok(out);
    }
    let w = ens.volume() / m as f64;
    let dim = ens.dim;
    let sums = kernel.pair_sums(&ens.x, &ens.v);
    let step = ens.step;
    let controlled = u != 0.0 && alpha.norm_linf > T::zero();
    let new: Vec<([f64; 2], [f64; 2])> = (0..m)
        .into_par_iter()
        .map(|p| {
            let (x, v) = (ens.x[p], ens.v[p]);
            let (a, mv) = sums[p];
            let al = if controlled { alpha.evaluate(space, x) } else { [0.0; 2] };
            let amp = if noise_on { (2.0 * w * a.max(0.0) * dt).sqrt() } else { 0.0 };
            let mut rng = noise_on.then(|| stream_rng(ens.seed, ens.replicate, step, p as u128 * WORDS_PER_PARTICLE));
            let mut xn = [0.0; 2];
            let mut vn = [0.0; 2];
            for i in 0..dim {
                let drift = w * (mv[i] - a * v[i]) - u * al[i];
                let xi: f64 = rng.as_mut().map_or(0.0, |r| r.sample(StandardNormal));
                xn[i] = wrap(x[i] + v[i] * dt, ens.half_width);
                vn[i] = v[i] + drift * dt + amp * xi;
            }
            (xn, vn)
        })
        .collect();
    let (x, v) = new.into_iter().unzip();
    Ok(ParticleEnsemble { x, v, step: step + 1, ..ens.clone() })
}

/// Ensemble observables on the spatial grid.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleStats {
    pub m: usize,
    pub mean_velocity: [f64; 2],
    /// Sample covariance of the velocities (normalized by `m - 1`).
    pub covariance: [[f64; 2]; 2],
    /// Particles per cell; cells are centered at the grid nodes.
    pub counts: Vec<u64>,
    /// `|Omega| count / (m h^d)`, comparable with `rho_f`.
    pub density: Vec<f64>,
    /// Momentum density per direction, same normalization.
    pub momentum: Vec<Vec<f64>>,
}

fn cell_index<T: Real>(space: &Space<T>, x: [f64; 2]) -> usize {
    let d = &space.domain;
    let h = d.spacing().as_f64();
    let p = 2.0 * d.half_width.as_f64();
    let idx = |c: f64| ((c.rem_euclid(p) / h).round() as usize) % d.nx;
    match d.dim {
        1 => idx(x[0]),
        _ => idx(x[0]) * d.nx + idx(x[1]),
    }
}

pub fn estimate_stats<T: Real>(ens: &ParticleEnsemble, space: &Space<T>) -> EnsembleStats {
    let d = &space.domain;
    let m = ens.len();
    let dim = ens.dim;
    let nf = d.n_fourier();
    let mut counts = vec![0u64; nf];
    let mut mom = vec![vec![0.0; nf]; dim];
    let mut mean = [0.0; 2];
    for (x, v) in ens.x.iter().zip(&ens.v) {
        let c = cell_index(space, *x);
        counts[c] += 1;
        for i in 0..dim {
            mom[i][c] += v[i];
            mean[i] += v[i];
        }
    }
    let mf = m.max(1) as f64;
    for mi in mean.iter_mut() {
        *mi /= mf;
    }
    let mut cov = [[0.0; 2]; 2];
    if m > 1 {
        for v in &ens.v {
            for a in 0..dim {
                for b in 0..dim {
                    cov[a][b] += (v[a] - mean[a]) * (v[b] - mean[b]);
                }
            }
        }
        for row in cov.iter_mut() {
            for c in row.iter_mut() {
                *c /= (m - 1) as f64;
            }
        }
    }
    let scale = ens.volume() / (mf * d.cell_volume().as_f64());
    let density = counts.iter().map(|&c| c as f64 * scale).collect();
    let momentum = mom.into_iter().map(|row| row.into_iter().map(|s| s * scale).collect()).collect();
    EnsembleStats { m, mean_velocity: mean, covariance: cov, counts, density, momentum }
}

/// Cell averages of `rho_f = 1 + rho_{mu y}` and `rho_{v f} = rho_{mu v y}`
/// over the histogram cells.
pub fn pde_cell_moments<T: Real>(space: &Space<T>, y: &SpectralField<T>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = &space.domain;
    let h = d.spacing().as_f64();
    let sinc = |xi: f64| {
        let a = 0.5 * xi * h;
        if a == 0.0 {
            1.0
        } else {
            a.sin() / a
        }
    };
    let filtered = |kf: usize| -> Vec<f64> {
        let coeffs: Vec<_> = y
            .slice(kf)
            .iter()
            .enumerate()
            .map(|(jf, c)| {
                let j = d.fourier_index(jf);
                let mut s = sinc(d.wavenumber(j[0]).as_f64());
                if d.dim == 2 {
                    s *= sinc(d.wavenumber(j[1]).as_f64());
                }
                c.scale(T::lit(s))
            })
            .collect();
        space.to_nodal(&coeffs).iter().map(|c| c.re.as_f64()).collect()
    };
    let rho = filtered(0).into_iter().map(|r| 1.0 + r).collect();
    let mom = (0..d.dim).map(|i| filtered(d.unit_hermite(i))).collect();
    (rho, mom)
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanFieldOptions {
    pub replicates: usize,
    pub seed: u64,
    pub noise: bool,
    pub kernel: KernelMode,
    /// Relative truncation of the kernel series.
    pub series_tol: f64,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self { replicates: 8, seed: 0, noise: true, kernel: KernelMode::Auto, series_tol: 1e-12 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanFieldRow {
    pub step: usize,
    pub time: f64,
    /// `L^2` distance between the replicate-mean density and the PDE density.
    pub density_discrepancy: f64,
    /// `L^2` norm of the per-cell standard errors of the replicate mean.
    pub density_se: f64,
    pub momentum_discrepancy: f64,
    pub momentum_se: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanFieldReport {
    pub m: usize,
    pub replicates: usize,
    pub rows: Vec<MeanFieldRow>,
    pub notes: Vec<String>,
}

/// Runs `opts.replicates` independent ensembles of size `m` from `f0 =
/// mu (1 + y0)` under the control `u` and compares their cell moments with
/// the PDE trajectory at the requested steps.
pub fn meanfield_compare<T: Real>(
    model: &Model<T>,
    y0: &SpectralField<T>,
    u: &ControlSignal<T>,
    pde: &Trajectory<T>,
    m: usize,
    steps: &[usize],
    opts: &MeanFieldOptions,
) -> Result<MeanFieldReport> {
    let grid: &TimeGrid<T> = &pde.grid;
    u.check_grid(grid)?;
    if opts.replicates < 2 {
        return Err(KfpError::InvalidParameter { name: "replicates", reason: "need at least 2 for error bars".into() });
    }
    if let Some(&s) = steps.iter().find(|&&s| s > grid.steps) {
        return Err(KfpError::InvalidParameter { name: "steps", reason: format!("{s} exceeds {}", grid.steps) });
    }
    let space = &model.space;
    let kernel = ParticleKernel::new(space, &model.potential, opts.kernel, opts.series_tol)?;
    let dt = grid.dt().as_f64();
    let last = steps.iter().copied().max().unwrap_or(0);
    let ctrl: Vec<f64> = u.values.iter().map(|v| v.as_f64()).collect();
    let alpha = model.alpha.clone();
    let use_control = model.terms.control;
    // runs[r][s] = stats at steps[s]
    let runs: Vec<Vec<EnsembleStats>> = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<EnsembleStats>> {
            let mut ens = ParticleEnsemble::sample(space, y0, m, opts.seed, r)?;
            let mut out = vec![None; steps.len()];
            for n in 0..=last {
                for (slot, &s) in out.iter_mut().zip(steps) {
                    if s == n {
                        *slot = Some(estimate_stats(&ens, space));
                    }
                }
                if n < last {
                    let un = if use_control { ctrl[n] } else { 0.0 };
                    ens = particle_step(&ens, un, dt, &kernel, space, &alpha, opts.noise)?;
                }
            }
            Ok(out.into_iter().map(|s| s.expect("every step visited")).collect())
        })
        .collect::<Result<_>>()?;
    let cell = space.domain.cell_volume().as_f64();
    let reps = opts.replicates as f64;
    let mut rows = Vec::new();
    for (si, &s) in steps.iter().enumerate() {
        let (rho, mom) = pde_cell_moments(space, &pde.states[s]);
        let compare = |get: &dyn Fn(&EnsembleStats) -> &[f64], exact: &[f64]| -> (f64, f64) {
            let mut dis = 0.0;
            let mut se = 0.0;
            for (c, e) in exact.iter().enumerate() {
                let vals: Vec<f64> = runs.iter().map(|r| get(&r[si])[c]).collect();
                let mean = vals.iter().sum::<f64>() / reps;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0);
                dis += (mean - e).powi(2);
                se += var / reps;
            }
            ((cell * dis).sqrt(), (cell * se).sqrt())
        };
        let (dd, ds) = compare(&|st| &st.density, &rho);
        let mut md = 0.0;
        let mut ms = 0.0;
        for (i, mi) in mom.iter().enumerate() {
            let (a, b) = compare(&|st| &st.momentum[i], mi);
            md += a * a;
            ms += b * b;
        }
        let (md, ms) = (md.sqrt(), ms.sqrt());
        rows.push(MeanFieldRow {
            step: s,
            time: grid.time(s).as_f64(),
            density_discrepancy: dd,
            density_se: ds,
            momentum_discrepancy: md,
            momentum_se: ms,
            within_3se: dd <= 3.0 * ds && md <= 3.0 * ms,
        });
    }
    let mut notes = vec![format!(
        "pair sums: {}",
        if kernel.is_spectral() { "truncated Fourier series" } else { "direct" }
    )];
    if use_control && ctrl.iter().any(|&c| c != 0.0) {
        notes.push("control enters the particles as the drift -u alpha(x_i) (transport-form reading of u alpha . grad_v f)".into());
    }
    Ok(MeanFieldReport { m, replicates: opts.replicates, rows, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::potential::PotentialKind;
    use crate::scalar::Complex;
    use std::f64::consts::PI;

    fn setup(dim: usize, kind: PotentialKind) -> (Space<f64>, PotentialSpec<f64>, ControlShape<f64>) {
        let space = Space::new(DomainSpec::new(dim, PI, 16, 4).unwrap()).unwrap();
        let u = PotentialSpec::new(&space, kind).unwrap();
        let a = ControlShape::zero(&space);
        (space, u, a)
    }

    fn synthetic(dim: usize, m: usize, seed: u64) -> ParticleEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..m).map(|_| [rng.random_range(-PI..PI), rng.random_range(-PI..PI)]).collect();
        let v = (0..m).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        ParticleEnsemble::new(dim, PI, x, v, seed, 0).unwrap()
    }

    #[test]
    fn wrap_lands_in_torus() {
        for x in [-10.0, -PI, -1.0, 0.0, PI, 3.0 * PI + 0.1, 1e3] {
            let w = wrap(x, PI);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
            assert!((((x - w) / (2.0 * PI)).round() * 2.0 * PI - (x - w)).abs() < 1e-9);
        }
    }

    #[test]
    fn spectral_sums_match_direct() {
        for dim in [1, 2] {
            let (space, u, _) = setup(dim, PotentialKind::WrappedGaussian { sigma: 0.5 });
            let ens = synthetic(dim, 300, 3);
            let direct = ParticleKernel::new(&space, &u, KernelMode::Direct, 1e-13).unwrap();
            let spec = ParticleKernel::new(&space, &u, KernelMode::Spectral, 1e-13).unwrap();
            let a = direct.pair_sums(&ens.x, &ens.v);
            let b = spec.pair_sums(&ens.x, &ens.v);
            for (p, q) in a.iter().zip(&b) {
                assert!((p.0 - q.0).abs() < 1e-9 * p.0.max(1.0), "d={dim} {p:?} {q:?}");
                for i in 0..dim {
                    assert!((p.1[i] - q.1[i]).abs() < 1e-9 * p.0.max(1.0));
                }
            }
        }
    }

    #[test]
    fn spectral_mode_needs_closed_form() {
        let (space, u, _) = setup(1, PotentialKind::UniformBump { width: 1.0 });
        assert!(ParticleKernel::new(&space, &u, KernelMode::Spectral, 1e-12).is_err());
        assert!(!ParticleKernel::new(&space, &u, KernelMode::Auto, 1e-12).unwrap().is_spectral());
    }

    #[test]
    fn equal_velocities_only_advect() {
        let (space, u, a) = setup(1, PotentialKind::RaisedCosine { width: 1.0 });
        let k = ParticleKernel::new(&space, &u, KernelMode::Direct, 1e-12).unwrap();
        let x = vec![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        let v = vec![[0.7, 0.0]; 3];
        let ens = ParticleEnsemble::new(1, PI, x.clone(), v.clone(), 0, 0).unwrap();
        let next = particle_step(&ens, 0.0, 0.1, &k, &space, &a, false).unwrap();
        assert_eq!(next.v, v);
        assert!((next.x[0][0] - 0.07).abs() < 1e-15);
        assert!((next.x[2][0] - wrap(3.07, PI)).abs() < 1e-15);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn two_body_relative_velocity_decays() {
        // Two particles at rest relative to each other in position: the
        // relative velocity obeys r' = -2 w U(0) r with the self terms cancelling.
        let (space, u, a) = setup(1, PotentialKind::WrappedGaussian { sigma: 0.5 });
        let k = ParticleKernel::new(&space, &u, KernelMode::Direct, 1e-12).unwrap();
        let x = vec![[0.0, 0.0], [1e-9, 0.0]];
        let v = vec![[1e-6, 0.0], [-1e-6, 0.0]];
        let mut ens = ParticleEnsemble::new(1, PI, x, v, 0, 0).unwrap();
        let w = ens.volume() / 2.0;
        let rate = 2.0 * w * k.value([0.0, 0.0]);
        let dt = 1e-4;
        let steps = 200;
        for _ in 0..steps {
            ens = particle_step(&ens, 0.0, dt, &k, &space, &a, false).unwrap();
        }
        let r = (ens.v[0][0] - ens.v[1][0]) / 2e-6;
        let exact = (1.0 - rate * dt).powi(steps);
        assert!((r - exact).abs() < 1e-6, "{r} vs {exact}");
        assert!((r - (-rate * dt * steps as f64).exp()).abs() < 5e-3);
    }

    #[test]
    fn mean_velocity_conserved_without_noise() {
        let (space, u, a) = setup(2, PotentialKind::WrappedGaussian { sigma: 0.5 });
        let k = ParticleKernel::new(&space, &u, KernelMode::Direct, 1e-12).unwrap();
        let mut ens = synthetic(2, 200, 9);
        let m0 = estimate_stats(&ens, &space).mean_velocity;
        for _ in 0..20 {
            ens = particle_step(&ens, 0.0, 0.01, &k, &space, &a, false).unwrap();
        }
        let m1 = estimate_stats(&ens, &space).mean_velocity;
        assert!((m0[0] - m1[0]).abs() < 1e-12 && (m0[1] - m1[1]).abs() < 1e-12);
    }

    #[test]
    fn mean_velocity_drift_within_error_bars() {
        let (space, u, a) = setup(1, PotentialKind::WrappedGaussian { sigma: 0.5 });
        let k = ParticleKernel::new(&space, &u, KernelMode::Spectral, 1e-12).unwrap();
        let mut ens = synthetic(1, 400, 2);
        let m0 = estimate_stats(&ens, &space).mean_velocity[0];
        let (dt, steps) = (1e-3, 10_000);
        for _ in 0..steps {
            ens = particle_step(&ens, 0.0, dt, &k, &space, &a, true).unwrap();
        }
        let m1 = estimate_stats(&ens, &space).mean_velocity[0];
        // Noise variance per particle accumulates to about 2 T since w sum U ~ 1.
        let se = (2.0 * 1.2 * dt * steps as f64 / 400.0).sqrt();
        assert!((m1 - m0).abs() < 3.0 * se, "drift {} se {se}", m1 - m0);
    }

    #[test]
    fn control_drift_pushes_along_alpha() {
        let space = Space::new(DomainSpec::new(1, PI, 16, 4).unwrap()).unwrap();
        let u = PotentialSpec::new(&space, PotentialKind::default()).unwrap();
        let a = ControlShape::constant(&space, [0.5, 0.0]);
        let k = ParticleKernel::new(&space, &u, KernelMode::Auto, 1e-12).unwrap();
        let ens = ParticleEnsemble::new(1, PI, vec![[0.3, 0.0]], vec![[0.0, 0.0]], 0, 0).unwrap();
        let next = particle_step(&ens, 2.0, 0.1, &k, &space, &a, false).unwrap();
        assert!((next.v[0][0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn noise_streams_are_reproducible_and_keyed() {
        let (space, u, a) = setup(1, PotentialKind::default());
        let k = ParticleKernel::new(&space, &u, KernelMode::Auto, 1e-12).unwrap();
        let ens = synthetic(1, 50, 4);
        let a1 = particle_step(&ens, 0.0, 0.01, &k, &space, &a, true).unwrap();
        let a2 = particle_step(&ens, 0.0, 0.01, &k, &space, &a, true).unwrap();
        assert_eq!(a1.v, a2.v);
        let other = ParticleEnsemble { replicate: 1, ..ens.clone() };
        let b = particle_step(&other, 0.0, 0.01, &k, &space, &a, true).unwrap();
        assert_ne!(a1.v, b.v);
        assert!(particle_step(&ens, 0.0, 0.0, &k, &space, &a, true).is_err());
    }

    #[test]
    fn single_particle_is_a_delta_bin() {
        let (space, _, _) = setup(2, PotentialKind::default());
        let ens = ParticleEnsemble::new(2, PI, vec![[0.1, -0.2]], vec![[1.0, 2.0]], 0, 0).unwrap();
        let s = estimate_stats(&ens, &space);
        assert_eq!(s.counts.iter().sum::<u64>(), 1);
        let c = s.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(c, cell_index(&space, [0.1, -0.2]));
        assert_eq!(c, 15);
        assert_eq!(s.mean_velocity, [1.0, 2.0]);
        assert_eq!(s.covariance, [[0.0; 2]; 2]);
    }

    #[test]
    fn uniform_maxwellian_sample_statistics() {
        let (space, _, _) = setup(1, PotentialKind::default());
        let y0 = SpectralField::zeros(space.domain);
        let m = 20_000;
        let ens = ParticleEnsemble::sample(&space, &y0, m, 11, 0).unwrap();
        let s = estimate_stats(&ens, &space);
        assert_eq!(s.counts.iter().sum::<u64>(), m as u64);
        let p = 1.0 / 16.0;
        let sd = (m as f64 * p * (1.0 - p)).sqrt();
        for &c in &s.counts {
            assert!((c as f64 - m as f64 * p).abs() < 4.5 * sd, "count {c}");
        }
        assert!((s.covariance[0][0] - 1.0).abs() < 5.0 / (m as f64).sqrt());
        assert!(s.mean_velocity[0].abs() < 5.0 / (m as f64).sqrt());
    }

    #[test]
    fn sampled_density_follows_perturbation() {
        let (space, _, _) = setup(1, PotentialKind::default());
        let mut y0 = SpectralField::zeros(space.domain);
        y0.set([1, 0], [0, 0], Complex::new(0.2, 0.0));
        y0.set([-1, 0], [0, 0], Complex::new(0.2, 0.0));
        let m = 40_000;
        let ens = ParticleEnsemble::sample(&space, &y0, m, 5, 0).unwrap();
        let s = estimate_stats(&ens, &space);
        let (rho, _) = pde_cell_moments(&space, &y0);
        let h = 2.0 * PI / 16.0;
        for (c, r) in s.counts.iter().zip(&rho) {
            let expect = m as f64 * r * h / (2.0 * PI);
            assert!((*c as f64 - expect).abs() < 4.5 * expect.sqrt(), "{c} vs {expect}");
        }
    }

    #[test]
    fn negative_initial_density_rejected() {
        let (space, _, _) = setup(1, PotentialKind::default());
        let y0 = SpectralField::constant(space.domain, -1.5);
        match ParticleEnsemble::sample(&space, &y0, 10, 0, 0) {
            Err(KfpError::NegativeDensity { min }) => assert!(min < 0.0),
            other => panic!("{other:?}"),
        }
    }
}
