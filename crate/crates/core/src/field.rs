//! Perturbation fields in the Fourier-Hermite basis and their norms.
//!
//! With orthonormal Hermite functions and the Fourier series convention of
//! [`crate::fft`], the weighted norms are diagonal sums:
//!
//! ```text
//! |y|_Y^2      = (2L)^d sum |c_jk|^2
//! |y|_{V_v}^2  = (2L)^d sum (1 + |k|) |c_jk|^2
//! |g|_{V_v'}^2 = (2L)^d sum |c_jk|^2 / (1 + |k|)
//! ```

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::DomainSpec;
use crate::scalar::{Complex, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<T> {
    pub domain: DomainSpec<T>,
    pub coeffs: Vec<Complex<T>>,
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(domain: DomainSpec<T>) -> Self {
        Self { coeffs: vec![Complex::default(); domain.len()], domain }
    }

    /// The spatially constant, velocity independent field `y = c`.
    pub fn constant(domain: DomainSpec<T>, c: T) -> Self {
        let mut f = Self::zeros(domain);
        f.coeffs[0] = Complex::new(c, T::zero());
        f
    }

    /// A single basis element `value * exp(i xi_j x) h_k(v)`.
    pub fn mode(domain: DomainSpec<T>, j: [isize; 2], k: [usize; 2], value: Complex<T>) -> Self {
        let mut f = Self::zeros(domain);
        f.set(j, k, value);
        f
    }

    /// The field `y = v_i` (pure `e_i` Hermite mode, constant in space).
    pub fn velocity(domain: DomainSpec<T>, i: usize) -> Self {
        let mut k = [0, 0];
        k[i] = 1;
        Self::mode(domain, [0, 0], k, Complex::new(T::one(), T::zero()))
    }

    /// Build a field from one spatial coefficient array per Hermite mode.
    pub fn from_slices(domain: DomainSpec<T>, slices: &[(usize, &[Complex<T>])]) -> Self {
        let mut f = Self::zeros(domain);
        for (kf, s) in slices {
            f.slice_mut(*kf).copy_from_slice(s);
        }
        f
    }

    #[inline]
    fn flat(&self, jf: usize, kf: usize) -> usize {
        kf * self.domain.n_fourier() + jf
    }

    pub fn get(&self, j: [isize; 2], k: [usize; 2]) -> Complex<T> {
        self.coeffs[self.flat(self.domain.fourier_flat(j), self.domain.hermite_flat(k))]
    }

    pub fn set(&mut self, j: [isize; 2], k: [usize; 2], value: Complex<T>) {
        let idx = self.flat(self.domain.fourier_flat(j), self.domain.hermite_flat(k));
        self.coeffs[idx] = value;
    }

    /// Spatial coefficients of Hermite mode `kf`.
    #[inline]
    pub fn slice(&self, kf: usize) -> &[Complex<T>] {
        let nf = self.domain.n_fourier();
        &self.coeffs[kf * nf..(kf + 1) * nf]
    }

    #[inline]
    pub fn slice_mut(&mut self, kf: usize) -> &mut [Complex<T>] {
        let nf = self.domain.n_fourier();
        &mut self.coeffs[kf * nf..(kf + 1) * nf]
    }

    /// Mass-mode coefficient `(j = 0, k = 0)`.
    pub fn mass_mode(&self) -> Complex<T> {
        self.coeffs[0]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, a: T) {
        for c in &mut self.coeffs {
            *c = c.scale(a);
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut f = self.clone();
        f.scale(a);
        f
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        debug_assert_eq!(self.domain, x.domain);
        for (s, v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s += v.scale(a);
        }
    }

    fn weighted_sum(&self, weight: impl Fn(usize) -> T) -> T {
        let nf = self.domain.n_fourier();
        let total: T = (0..self.domain.n_hermite())
            .map(|kf| {
                let w = weight(self.domain.degree(kf));
                w * self.coeffs[kf * nf..(kf + 1) * nf].iter().map(|c| c.norm_sqr()).sum::<T>()
            })
            .sum();
        self.domain.volume() * total
    }

    /// `<self, other>_Y`, the real inner product with the Maxwellian weight.
    pub fn inner_y(&self, other: &Self) -> T {
        debug_assert_eq!(self.domain, other.domain);
        let s: T = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re).sum();
        self.domain.volume() * s
    }

    pub fn norm_y(&self) -> T {
        self.weighted_sum(|_| T::one()).sqrt()
    }

    pub fn norm_vv(&self) -> T {
        self.weighted_sum(|k| T::one() + T::of(k)).sqrt()
    }

    pub fn dual_norm_vv(&self) -> T {
        self.weighted_sum(|k| T::one() / (T::one() + T::of(k))).sqrt()
    }

    /// `|grad_v y|_{Y^d}`, accumulated through the derivative ladder.
    pub fn grad_v_norm(&self) -> T {
        (0..self.domain.dim)
            .map(|i| self.d_v(i).norm_y().powi(2))
            .sum::<T>()
            .sqrt()
    }

    /// Largest `|c(-j) - conj(c(j))|`, zero for fields of real functions.
    pub fn symmetry_defect(&self) -> T {
        let d = &self.domain;
        let nf = d.n_fourier();
        let mut worst = T::zero();
        for kf in 0..d.n_hermite() {
            for jf in 0..nf {
                let a = self.coeffs[kf * nf + jf];
                let b = self.coeffs[kf * nf + d.negated_fourier(jf)];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    /// Project onto fields of real functions: average with the reflected
    /// conjugate and drop the unresolved Nyquist modes.
    pub fn symmetrize(&mut self) {
        let d = self.domain;
        let nf = d.n_fourier();
        let half = T::lit(0.5);
        for kf in 0..d.n_hermite() {
            let s = &mut self.coeffs[kf * nf..(kf + 1) * nf];
            let orig = s.to_vec();
            for jf in 0..nf {
                s[jf] = if d.is_nyquist(jf) {
                    Complex::default()
                } else {
                    (orig[jf] + orig[d.negated_fourier(jf)].conj()).scale(half)
                };
            }
        }
    }

    /// Multiply by `v_i` (three-term ladder, top mode truncated).
    pub fn mul_v(&self, i: usize) -> Self {
        let d = self.domain;
        let nf = d.n_fourier();
        let stride = d.hermite_stride(i);
        let mut out = Self::zeros(d);
        for kf in 0..d.n_hermite() {
            let ki = d.hermite_index(kf)[i];
            let src = self.slice(kf);
            if ki < d.kv {
                let a = T::of(ki + 1).sqrt();
                let dst = &mut out.coeffs[(kf + stride) * nf..(kf + stride + 1) * nf];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += s.scale(a);
                }
            }
            if ki > 0 {
                let a = T::of(ki).sqrt();
                let dst = &mut out.coeffs[(kf - stride) * nf..(kf - stride + 1) * nf];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += s.scale(a);
                }
            }
        }
        out
    }

    /// `d y / d v_i` (lowering ladder, exact on the truncated space).
    pub fn d_v(&self, i: usize) -> Self {
        let d = self.domain;
        let nf = d.n_fourier();
        let stride = d.hermite_stride(i);
        let mut out = Self::zeros(d);
        for kf in 0..d.n_hermite() {
            let ki = d.hermite_index(kf)[i];
            if ki > 0 {
                let a = T::of(ki).sqrt();
                let dst = &mut out.coeffs[(kf - stride) * nf..(kf - stride + 1) * nf];
                for (o, s) in dst.iter_mut().zip(self.slice(kf)) {
                    *o += s.scale(a);
                }
            }
        }
        out
    }

    /// `d y / d v_i - v_i y = mu^{-1} d(mu y)/dv_i`, which on the basis is
    /// the scaled raising map `h_k -> -sqrt(k_i + 1) h_{k + e_i}`.
    pub fn raise(&self, i: usize) -> Self {
        let d = self.domain;
        let nf = d.n_fourier();
        let stride = d.hermite_stride(i);
        let mut out = Self::zeros(d);
        for kf in 0..d.n_hermite() {
            let ki = d.hermite_index(kf)[i];
            if ki < d.kv {
                let a = -T::of(ki + 1).sqrt();
                let src = &self.coeffs[kf * nf..(kf + 1) * nf];
                let dst = &mut out.coeffs[(kf + stride) * nf..(kf + stride + 1) * nf];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o = s.scale(a);
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::raise`] in `Y`.
    pub fn raise_adjoint(&self, i: usize) -> Self {
        let d = self.domain;
        let nf = d.n_fourier();
        let stride = d.hermite_stride(i);
        let mut out = Self::zeros(d);
        for kf in 0..d.n_hermite() {
            let ki = d.hermite_index(kf)[i];
            if ki < d.kv {
                let a = -T::of(ki + 1).sqrt();
                let src = &self.coeffs[(kf + stride) * nf..(kf + stride + 1) * nf];
                let dst = &mut out.coeffs[kf * nf..(kf + 1) * nf];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o = s.scale(a);
                }
            }
        }
        out
    }

    /// Multiply each Hermite block by `weight(|k|)`.
    pub fn map_degree(&self, weight: impl Fn(usize) -> T) -> Self {
        let mut out = self.clone();
        let nf = self.domain.n_fourier();
        for kf in 0..self.domain.n_hermite() {
            let w = weight(self.domain.degree(kf));
            for c in &mut out.coeffs[kf * nf..(kf + 1) * nf] {
                *c = c.scale(w);
            }
        }
        out
    }

    /// `R_0 y = -Delta_v y + v . grad_v y`, diagonal with eigenvalue `|k|`.
    pub fn apply_r0(&self) -> Self {
        self.map_degree(T::of)
    }

    /// `R y = R_0 y + y`; `<R y, y>_Y = |y|_{V_v}^2`.
    pub fn apply_r(&self) -> Self {
        self.map_degree(|k| T::one() + T::of(k))
    }

    /// Diagonal solve of `R z = g`.
    pub fn apply_r_inverse(&self) -> Self {
        self.map_degree(|k| T::one() / (T::one() + T::of(k)))
    }

    /// Random real field with complex Gaussian coefficients damped by
    /// `(1 + |j|^2)^{-1} (1 + |k|)^{-1}`, scaled to `|y|_Y = norm`.
    pub fn random<R: Rng + ?Sized>(domain: DomainSpec<T>, rng: &mut R, norm: T) -> Self {
        let nf = domain.n_fourier();
        let mut f = Self::zeros(domain);
        for kf in 0..domain.n_hermite() {
            let kd = T::of(domain.degree(kf));
            for jf in 0..nf {
                let j = domain.fourier_index(jf);
                let j2 = T::of((j[0] * j[0] + j[1] * j[1]) as usize);
                let damp = T::one() / ((T::one() + j2) * (T::one() + kd));
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                f.coeffs[kf * nf + jf] = Complex::new(T::lit(re), T::lit(im)).scale(damp);
            }
        }
        f.symmetrize();
        let n = f.norm_y();
        if n > T::zero() {
            f.scale(norm / n);
        }
        f
    }
}

impl<T: Real> AddAssign<&SpectralField<T>> for SpectralField<T> {
    fn add_assign(&mut self, rhs: &SpectralField<T>) {
        self.axpy(T::one(), rhs);
    }
}

impl<T: Real> SubAssign<&SpectralField<T>> for SpectralField<T> {
    fn sub_assign(&mut self, rhs: &SpectralField<T>) {
        self.axpy(-T::one(), rhs);
    }
}

impl<T: Real> Add for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn add(self, rhs: Self) -> SpectralField<T> {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl<T: Real> Sub for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn sub(self, rhs: Self) -> SpectralField<T> {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl<T: Real> Mul<T> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn mul(self, a: T) -> SpectralField<T> {
        self.scaled(a)
    }
}

impl<T: Real> Neg for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn neg(self) -> SpectralField<T> {
        self.scaled(-T::one())
    }
}
