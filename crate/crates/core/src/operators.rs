//! Right-hand side operators in coefficient space.
//!
//! ```text
//! A y  = Delta_v y - v . grad_v y - v . grad_x y
//! D y  = (U * rho_{mu v y}) . v
//! h1   = (U * rho_{mu y}) R0 y
//! h2   = (U * rho_{mu v y}) . (grad_v y - v y)
//! N y  = alpha . (grad_v y - v y),      B = -alpha . v
//! ```
//!
//! `rho_{mu y}` is the `k = 0` slice and `rho_{mu v y}` the `k = e_i` slices,
//! so the moments never leave coefficient space. `grad_v - v` is the raising
//! map [`SpectralField::raise`]. Products with spatial fields are formed on
//! the grid after truncating both factors to the 2/3 band, and truncated again.

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::field::SpectralField;
use crate::potential::{ControlShape, PotentialSpec};
use crate::scalar::{Complex, Real};
use crate::space::Space;

/// Switches for the optional parts of the right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Terms {
    /// The nonlocal drift `D`.
    pub coupling: bool,
    /// `h1` and `h2`.
    pub nonlinear: bool,
    /// `N` and `B`.
    pub control: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self { coupling: true, nonlinear: true, control: true }
    }
}

impl Terms {
    pub fn linear() -> Self {
        Self { coupling: true, nonlinear: false, control: false }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub space: Space<T>,
    pub potential: PotentialSpec<T>,
    pub alpha: ControlShape<T>,
    pub terms: Terms,
    b: SpectralField<T>,
}

/// Power-iteration estimate of an operator norm.
#[derive(Clone, Copy, Debug)]
pub struct NormEstimate<T> {
    /// Largest ratio `|N y|_{V_v'} / |y|_Y` met along the iteration.
    pub value: T,
    pub iterations: usize,
}

impl<T: Real> Model<T> {
    pub fn new(space: Space<T>, potential: PotentialSpec<T>, alpha: ControlShape<T>) -> Self {
        let mut b = space.zeros();
        for (i, comp) in alpha.components.iter().enumerate() {
            let kf = space.domain.unit_hermite(i);
            for (o, a) in b.slice_mut(kf).iter_mut().zip(comp) {
                *o = -a;
            }
        }
        Self { space, potential, alpha, terms: Terms::default(), b }
    }

    pub fn with_terms(mut self, terms: Terms) -> Self {
        self.terms = terms;
        self
    }

    pub fn domain(&self) -> crate::domain::DomainSpec<T> {
        self.space.domain
    }

    /// `U * g` on spatial coefficients.
    pub fn convolve_u(&self, g: &[Complex<T>]) -> Vec<Complex<T>> {
        self.potential.convolve(g)
    }

    /// The source field `B = -alpha . v`.
    pub fn b(&self) -> &SpectralField<T> {
        &self.b
    }

    /// Ornstein-Uhlenbeck part of `A`: `-|k| y`.
    pub fn apply_ou(&self, y: &SpectralField<T>) -> SpectralField<T> {
        y.map_degree(|k| -T::of(k))
    }

    /// Transport part of `A` along direction `i`: `-v_i d/dx_i y`.
    pub fn apply_transport_dir(&self, y: &SpectralField<T>, i: usize) -> SpectralField<T> {
        let nf = self.space.n_fourier();
        let mut out = y.mul_v(i);
        for kf in 0..self.space.domain.n_hermite() {
            for (jf, c) in out.coeffs[kf * nf..(kf + 1) * nf].iter_mut().enumerate() {
                let xi = self.space.xi(jf)[i];
                *c = Complex::new(c.im * xi, -c.re * xi);
            }
        }
        out
    }

    /// `-v . grad_x y`.
    pub fn apply_transport(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.apply_transport_dir(y, 0);
        for i in 1..self.space.dim() {
            out += &self.apply_transport_dir(y, i);
        }
        out
    }

    pub fn apply_a(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.apply_ou(y);
        out += &self.apply_transport(y);
        out
    }

    pub fn apply_r0(&self, y: &SpectralField<T>) -> SpectralField<T> {
        y.apply_r0()
    }

    pub fn apply_d(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for i in 0..self.space.dim() {
            let kf = self.space.domain.unit_hermite(i);
            let m = self.convolve_u(y.slice(kf));
            out.slice_mut(kf).copy_from_slice(&m);
        }
        out
    }

    /// Adjoint of `D` in `Y`.
    pub fn apply_d_adjoint(&self, q: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for i in 0..self.space.dim() {
            let kf = self.space.domain.unit_hermite(i);
            for ((o, c), s) in out.slice_mut(kf).iter_mut().zip(q.slice(kf)).zip(&self.potential.symbol) {
                *o = c * s.conj();
            }
        }
        out
    }

    /// `U * rho_{mu y}` as spatial coefficients.
    pub fn density_field(&self, y: &SpectralField<T>) -> Vec<Complex<T>> {
        self.convolve_u(y.slice(0))
    }

    /// `U * rho_{mu v_i y}` as spatial coefficients.
    pub fn momentum_field(&self, y: &SpectralField<T>, i: usize) -> Vec<Complex<T>> {
        self.convolve_u(y.slice(self.space.domain.unit_hermite(i)))
    }

    pub fn apply_h1(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        self.accumulate_product(&mut out, &self.density_field(y), &y.apply_r0(), T::one());
        out
    }

    pub fn apply_h2(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for i in 0..self.space.dim() {
            self.accumulate_product(&mut out, &self.momentum_field(y, i), &y.raise(i), T::one());
        }
        out
    }

    pub fn apply_n(&self, y: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for (i, a) in self.alpha.components.iter().enumerate() {
            self.accumulate_product(&mut out, a, &y.raise(i), T::one());
        }
        out
    }

    /// Adjoint of `N` in `Y`.
    pub fn apply_n_adjoint(&self, q: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for (i, a) in self.alpha.components.iter().enumerate() {
            let mut t = self.space.zeros();
            self.accumulate_product(&mut t, &self.space.conj_spatial(a), q, T::one());
            out += &t.raise_adjoint(i);
        }
        out
    }

    /// Full right-hand side with the enabled terms.
    pub fn assemble_rhs(&self, y: &SpectralField<T>, u: T) -> SpectralField<T> {
        let mut out = self.apply_a(y);
        out += &self.explicit_part(y, u);
        out
    }

    /// `D y - h1(y) - h2(y) + u (N y + B)` with the enabled terms.
    pub fn explicit_part(&self, y: &SpectralField<T>, u: T) -> SpectralField<T> {
        let mut out = self.space.zeros();
        if self.terms.coupling {
            out += &self.apply_d(y);
        }
        if self.terms.nonlinear {
            out -= &self.apply_h1(y);
            out -= &self.apply_h2(y);
        }
        if self.terms.control && u != T::zero() {
            let mut c = self.apply_n(y);
            c += &self.b;
            out.axpy(u, &c);
        }
        out
    }

    /// `h1'(y) dy`.
    pub fn h1_linear(&self, y: &SpectralField<T>, dy: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        self.accumulate_product(&mut out, &self.density_field(dy), &y.apply_r0(), T::one());
        self.accumulate_product(&mut out, &self.density_field(y), &dy.apply_r0(), T::one());
        out
    }

    /// `h1'(y)^* q`.
    pub fn h1_adjoint(&self, y: &SpectralField<T>, q: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        let a = self.space.conj_spatial(&self.density_field(y));
        self.accumulate_product(&mut out, &a, q, T::one());
        let mut out = out.apply_r0();
        let c = self.contraction(&y.apply_r0(), q);
        for ((o, c), s) in out.slice_mut(0).iter_mut().zip(&c).zip(&self.potential.symbol) {
            *o += c * s.conj();
        }
        out
    }

    /// `h2'(y) dy`.
    pub fn h2_linear(&self, y: &SpectralField<T>, dy: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for i in 0..self.space.dim() {
            self.accumulate_product(&mut out, &self.momentum_field(dy, i), &y.raise(i), T::one());
            self.accumulate_product(&mut out, &self.momentum_field(y, i), &dy.raise(i), T::one());
        }
        out
    }

    /// `h2'(y)^* q`.
    pub fn h2_adjoint(&self, y: &SpectralField<T>, q: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.space.zeros();
        for i in 0..self.space.dim() {
            let mut t = self.space.zeros();
            let m = self.space.conj_spatial(&self.momentum_field(y, i));
            self.accumulate_product(&mut t, &m, q, T::one());
            out += &t.raise_adjoint(i);
            let c = self.contraction(&y.raise(i), q);
            let kf = self.space.domain.unit_hermite(i);
            for ((o, c), s) in out.slice_mut(kf).iter_mut().zip(&c).zip(&self.potential.symbol) {
                *o += c * s.conj();
            }
        }
        out
    }

    /// Nodal values of the band-limited part of `c`.
    fn band_nodal(&self, c: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut data = c.to_vec();
        self.space.dealias(&mut data);
        self.space.inverse_in_place(&mut data);
        data
    }

    /// `out_k += s P F(c~ w~_k)` for every Hermite slice `k`, where `~`
    /// denotes nodal values of the band-limited part.
    pub fn accumulate_product(&self, out: &mut SpectralField<T>, c: &[Complex<T>], w: &SpectralField<T>, s: T) {
        let nf = self.space.n_fourier();
        let cn = self.band_nodal(c);
        if cn.iter().all(|z| z.norm_sqr() == T::zero()) {
            return;
        }
        let space = &self.space;
        out.coeffs
            .par_chunks_mut(nf)
            .zip(w.coeffs.par_chunks(nf))
            .for_each(|(o, ws)| {
                if ws.iter().all(|z| z.norm_sqr() == T::zero()) {
                    return;
                }
                let mut buf = ws.to_vec();
                space.dealias(&mut buf);
                space.inverse_in_place(&mut buf);
                for (b, a) in buf.iter_mut().zip(&cn) {
                    *b *= a;
                }
                space.forward_in_place(&mut buf);
                space.dealias(&mut buf);
                for (o, b) in o.iter_mut().zip(&buf) {
                    *o += b.scale(s);
                }
            });
    }

    /// Adjoint of `c -> P F(c~ w~_k)` summed over slices:
    /// `sum_k P F(conj(w~_k) p~_k)`.
    pub fn contraction(&self, w: &SpectralField<T>, p: &SpectralField<T>) -> Vec<Complex<T>> {
        let nf = self.space.n_fourier();
        let space = &self.space;
        let mut acc = w
            .coeffs
            .par_chunks(nf)
            .zip(p.coeffs.par_chunks(nf))
            .map(|(ws, ps)| {
                let zero = |s: &[Complex<T>]| s.iter().all(|z| z.norm_sqr() == T::zero());
                if zero(ws) || zero(ps) {
                    return vec![Complex::default(); nf];
                }
                let a = self.band_nodal(ws);
                let b = self.band_nodal(ps);
                a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect::<Vec<_>>()
            })
            .reduce(
                || vec![Complex::default(); nf],
                |mut x, y| {
                    for (a, b) in x.iter_mut().zip(&y) {
                        *a += b;
                    }
                    x
                },
            );
        space.forward_in_place(&mut acc);
        space.dealias(&mut acc);
        acc
    }

    /// `|N|_{L(Y, V_v')}` by power iteration on `N^* R^{-1} N`.
    pub fn estimate_n_norm<R: Rng + ?Sized>(&self, rng: &mut R, max_iter: usize, rtol: T) -> Result<NormEstimate<T>> {
        let d = self.space.domain;
        let mut y = SpectralField::random(d, rng, T::one());
        let mut best = T::zero();
        let mut last = T::zero();
        let mut iterations = 0;
        for it in 0..max_iter {
            iterations = it + 1;
            let ny = self.apply_n(&y);
            let ratio = ny.dual_norm_vv() / y.norm_y();
            best = best.max(ratio);
            let mut next = self.apply_n_adjoint(&ny.apply_r_inverse());
            next.symmetrize();
            let n = next.norm_y();
            if n == T::zero() {
                break;
            }
            next.scale(T::one() / n);
            y = next;
            if it > 0 && (ratio - last).abs() <= rtol * ratio {
                break;
            }
            last = ratio;
        }
        Ok(NormEstimate { value: best, iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::potential::PotentialKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model(dim: usize, nx: usize, kv: usize) -> Model<f64> {
        let space = Space::new(DomainSpec::new(dim, PI, nx, kv).unwrap()).unwrap();
        let u = PotentialSpec::new(&space, PotentialKind::WrappedGaussian { sigma: 0.6 }).unwrap();
        let a = ControlShape::gaussian_bump(&space, 0.8, 1.0, [1.0, 0.5]).unwrap();
        Model::new(space, u, a)
    }

    fn close(a: &SpectralField<f64>, b: &SpectralField<f64>, tol: f64) -> bool {
        (a - b).norm_y() <= tol * (1.0 + b.norm_y())
    }

    #[test]
    fn a_on_simple_fields() {
        let m = model(1, 16, 6);
        let d = m.domain();
        assert_eq!(m.apply_a(&SpectralField::constant(d, 3.0)).norm_y(), 0.0);
        let h3 = SpectralField::mode(d, [0, 0], [3, 0], Complex::new(1.0, 0.0));
        assert!(close(&m.apply_a(&h3), &h3.scaled(-3.0), 1e-15));
        let wave = SpectralField::mode(d, [1, 0], [0, 0], Complex::new(1.0, 0.0));
        let out = m.apply_a(&wave);
        let expect = SpectralField::mode(d, [1, 0], [1, 0], Complex::new(0.0, -1.0));
        assert!(close(&out, &expect, 1e-15));
    }

    #[test]
    fn d_and_moments() {
        let m = model(1, 16, 6);
        let d = m.domain();
        let v1 = SpectralField::velocity(d, 0);
        assert!(close(&m.apply_d(&v1), &v1, 1e-14));
        let rho_only = SpectralField::mode(d, [2, 0], [0, 0], Complex::new(0.5, 0.1));
        assert_eq!(m.apply_d(&rho_only).norm_y(), 0.0);
    }

    #[test]
    fn nonlinear_terms_on_simple_fields() {
        let m = model(1, 16, 6);
        let d = m.domain();
        let v1 = SpectralField::velocity(d, 0);
        assert_eq!(m.apply_h1(&v1).norm_y(), 0.0);
        let one_plus_v = &SpectralField::constant(d, 1.0) + &v1;
        assert!(close(&m.apply_h1(&one_plus_v), &v1, 1e-14));
        // h2(v_1) = 1 - v_1^2 = -sqrt(2) h_2
        let expect = SpectralField::mode(d, [0, 0], [2, 0], Complex::new(-2f64.sqrt(), 0.0));
        assert!(close(&m.apply_h2(&v1), &expect, 1e-14));
        assert_eq!(m.apply_h2(&SpectralField::constant(d, 2.0)).norm_y(), 0.0);
    }

    #[test]
    fn n_of_one_is_b() {
        for dim in [1, 2] {
            let m = model(dim, 16, 4);
            let one = SpectralField::constant(m.domain(), 1.0);
            assert!(close(&m.apply_n(&one), m.b(), 1e-14));
        }
    }

    #[test]
    fn b_norm_matches_alpha() {
        let m = model(1, 32, 4);
        assert!((m.b().norm_y() - m.alpha.norm_l2).abs() < 1e-12);
    }

    #[test]
    fn rhs_annihilates_mass_and_sums_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model(2, 8, 5);
        let y = SpectralField::random(m.domain(), &mut rng, 0.3);
        let u = 0.7;
        let rhs = m.assemble_rhs(&y, u);
        assert!(rhs.mass_mode().norm() < 1e-15);
        let mut sum = m.apply_a(&y);
        sum += &m.apply_d(&y);
        sum -= &m.apply_h1(&y);
        sum -= &m.apply_h2(&y);
        sum.axpy(u, &m.apply_n(&y));
        sum.axpy(u, m.b());
        assert!(close(&rhs, &sum, 1e-14));
        let zero = m.space.zeros();
        assert!(close(&m.assemble_rhs(&zero, 1.0), m.b(), 1e-15));
    }

    fn adjoint_gap(
        m: &Model<f64>,
        rng: &mut ChaCha8Rng,
        op: impl Fn(&SpectralField<f64>) -> SpectralField<f64>,
        adj: impl Fn(&SpectralField<f64>) -> SpectralField<f64>,
    ) -> f64 {
        let x = SpectralField::random(m.domain(), rng, 1.0);
        let q = SpectralField::random(m.domain(), rng, 1.0);
        let lhs = op(&x).inner_y(&q);
        let rhs = x.inner_y(&adj(&q));
        (lhs - rhs).abs() / (op(&x).norm_y() * q.norm_y()).max(1e-300)
    }

    #[test]
    fn adjoints_pass_dot_product_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [1, 2] {
            let m = model(dim, 12, 5);
            let y = SpectralField::random(m.domain(), &mut rng, 0.8);
            let g = adjoint_gap(&m, &mut rng, |x| m.apply_d(x), |q| m.apply_d_adjoint(q));
            assert!(g < 1e-13, "D {g}");
            let g = adjoint_gap(&m, &mut rng, |x| m.apply_n(x), |q| m.apply_n_adjoint(q));
            assert!(g < 1e-13, "N {g}");
            let g = adjoint_gap(&m, &mut rng, |x| m.h1_linear(&y, x), |q| m.h1_adjoint(&y, q));
            assert!(g < 1e-13, "h1 {g}");
            let g = adjoint_gap(&m, &mut rng, |x| m.h2_linear(&y, x), |q| m.h2_adjoint(&y, q));
            assert!(g < 1e-13, "h2 {g}");
        }
    }

    #[test]
    fn linearizations_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = model(1, 16, 6);
        let y = SpectralField::random(m.domain(), &mut rng, 0.5);
        let dy = SpectralField::random(m.domain(), &mut rng, 1.0);
        // quadratic maps: central difference is exact
        let h = 1e-3;
        let yp = &y + &dy.scaled(h);
        let ym = &y - &dy.scaled(h);
        let fd1 = (&m.apply_h1(&yp) - &m.apply_h1(&ym)).scaled(0.5 / h);
        assert!(close(&fd1, &m.h1_linear(&y, &dy), 1e-9));
        let fd2 = (&m.apply_h2(&yp) - &m.apply_h2(&ym)).scaled(0.5 / h);
        assert!(close(&fd2, &m.h2_linear(&y, &dy), 1e-9));
    }

    #[test]
    fn n_norm_vanishes_without_alpha() {
        let space = Space::new(DomainSpec::new(1, PI, 16, 4).unwrap()).unwrap();
        let u = PotentialSpec::new(&space, PotentialKind::default()).unwrap();
        let a = ControlShape::zero(&space);
        let m = Model::new(space, u, a);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(m.estimate_n_norm(&mut rng, 20, 1e-6).unwrap().value, 0.0);
    }

    #[test]
    fn n_norm_bounds_probes() {
        let m = model(1, 16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = m.estimate_n_norm(&mut rng, 200, 1e-10).unwrap();
        for _ in 0..20 {
            let y = SpectralField::random(m.domain(), &mut rng, 1.0);
            let r = m.apply_n(&y).dual_norm_vv() / y.norm_y();
            assert!(r <= est.value * (1.0 + 1e-8));
        }
    }
}
