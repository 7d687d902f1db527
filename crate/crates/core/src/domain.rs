//! Truncation parameters of the phase space and index bookkeeping.
//!
//! A field lives on the periodic torus `[-L, L)^d` in position and on the
//! whole space in velocity. Positions are resolved by `nx` Fourier modes per
//! dimension, velocities by normalized Hermite polynomials of degree
//! `0..=kv` per dimension (tensor product).
//!
//! Flat layouts used throughout the crate:
//! - Fourier index `jf` follows FFT order per dimension (`0, 1, .., nx/2-1,
//!   -nx/2, .., -1`), row-major over dimensions.
//! - Hermite index `kf` is row-major over the multi-index `(k_1, .., k_d)`.
//! - A field stores its coefficients as `coeffs[kf * n_fourier + jf]`, so
//!   each Hermite mode owns one contiguous spatial block.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::scalar::Real;

/// Largest Hermite degree accepted; the recurrence tables overflow beyond it.
pub const MAX_HERMITE_DEGREE: usize = 180;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec<T> {
    /// Spatial and velocity dimension, 1 or 2.
    pub dim: usize,
    /// Torus half-width `L`.
    pub half_width: T,
    /// Fourier modes per spatial dimension.
    pub nx: usize,
    /// Maximal Hermite degree per velocity dimension.
    pub kv: usize,
}

impl<T: Real> DomainSpec<T> {
    pub fn new(dim: usize, half_width: T, nx: usize, kv: usize) -> Result<Self> {
        let spec = Self { dim, half_width, nx, kv };
        spec.validate()?;
        Ok(spec)
    }

    /// Desk-scale default in one dimension: `nx = 64`, `kv = 31`, `L = pi`.
    pub fn default_1d() -> Self {
        Self { dim: 1, half_width: T::PI(), nx: 64, kv: 31 }
    }

    /// Desk-scale default in two dimensions: `nx = 32`, `kv = 15`, `L = pi`.
    pub fn default_2d() -> Self {
        Self { dim: 2, half_width: T::PI(), nx: 32, kv: 15 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(KfpError::InvalidDomain(format!("d must be 1 or 2, got {}", self.dim)));
        }
        if self.nx < 4 || !self.nx.is_multiple_of(2) {
            return Err(KfpError::InvalidDomain(format!(
                "Nx must be even and >= 4, got {}",
                self.nx
            )));
        }
        if self.kv < 2 {
            return Err(KfpError::InvalidDomain(format!("Kv must be >= 2, got {}", self.kv)));
        }
        if self.kv > MAX_HERMITE_DEGREE {
            return Err(KfpError::InvalidDomain(format!(
                "Kv = {} exceeds the recurrence cap {}",
                self.kv, MAX_HERMITE_DEGREE
            )));
        }
        if !(self.half_width > T::zero()) || !self.half_width.is_finite() {
            return Err(KfpError::InvalidDomain(format!(
                "L must be positive and finite, got {}",
                self.half_width
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn n_fourier(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Hermite modes per velocity dimension, `kv + 1`.
    #[inline]
    pub fn modes_per_dim(&self) -> usize {
        self.kv + 1
    }

    #[inline]
    pub fn n_hermite(&self) -> usize {
        self.modes_per_dim().pow(self.dim as u32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_fourier() * self.n_hermite()
    }

    /// Torus volume `(2L)^d`.
    pub fn volume(&self) -> T {
        (T::lit(2.0) * self.half_width).powi(self.dim as i32)
    }

    pub fn spacing(&self) -> T {
        T::lit(2.0) * self.half_width / T::of(self.nx)
    }

    /// Volume of one grid cell, `h^d`.
    pub fn cell_volume(&self) -> T {
        self.spacing().powi(self.dim as i32)
    }

    /// Signed wavenumber index for an FFT-ordered position `idx` in `0..nx`.
    #[inline]
    pub fn signed_mode(&self, idx: usize) -> isize {
        if idx < self.nx / 2 {
            idx as isize
        } else {
            idx as isize - self.nx as isize
        }
    }

    /// FFT-ordered position of signed mode `j`.
    #[inline]
    pub fn mode_position(&self, j: isize) -> usize {
        j.rem_euclid(self.nx as isize) as usize
    }

    /// Signed multi-index of flat Fourier index `jf`; unused components are 0.
    pub fn fourier_index(&self, jf: usize) -> [isize; 2] {
        match self.dim {
            1 => [self.signed_mode(jf), 0],
            _ => [self.signed_mode(jf / self.nx), self.signed_mode(jf % self.nx)],
        }
    }

    pub fn fourier_flat(&self, j: [isize; 2]) -> usize {
        match self.dim {
            1 => self.mode_position(j[0]),
            _ => self.mode_position(j[0]) * self.nx + self.mode_position(j[1]),
        }
    }

    /// Flat index of the mode `-j`.
    pub fn negated_fourier(&self, jf: usize) -> usize {
        let j = self.fourier_index(jf);
        self.fourier_flat([-j[0], -j[1]])
    }

    /// Multi-index of flat Hermite index `kf`; unused components are 0.
    pub fn hermite_index(&self, kf: usize) -> [usize; 2] {
        let m = self.modes_per_dim();
        match self.dim {
            1 => [kf, 0],
            _ => [kf / m, kf % m],
        }
    }

    pub fn hermite_flat(&self, k: [usize; 2]) -> usize {
        match self.dim {
            1 => k[0],
            _ => k[0] * self.modes_per_dim() + k[1],
        }
    }

    /// Flat Hermite index of the unit multi-index `e_i`.
    pub fn unit_hermite(&self, i: usize) -> usize {
        let mut k = [0usize; 2];
        k[i] = 1;
        self.hermite_flat(k)
    }

    /// Total degree `|k|` of flat Hermite index `kf`.
    #[inline]
    pub fn degree(&self, kf: usize) -> usize {
        let k = self.hermite_index(kf);
        k[0] + k[1]
    }

    /// Stride in flat Hermite index for a unit step along velocity direction `i`.
    #[inline]
    pub fn hermite_stride(&self, i: usize) -> usize {
        if self.dim == 2 && i == 0 {
            self.modes_per_dim()
        } else {
            1
        }
    }

    /// True when any component of `jf` sits on the unresolved Nyquist mode.
    pub fn is_nyquist(&self, jf: usize) -> bool {
        let half = -(self.nx as isize / 2);
        let j = self.fourier_index(jf);
        j[..self.dim].contains(&half)
    }

    /// Largest retained mode under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> isize {
        ((self.nx - 1) / 3) as isize
    }

    /// True when `jf` survives 2/3-rule dealiasing in every direction.
    pub fn in_dealias_band(&self, jf: usize) -> bool {
        let cut = self.dealias_cutoff();
        let j = self.fourier_index(jf);
        j[..self.dim].iter().all(|c| c.abs() <= cut)
    }

    /// Physical coordinate of node `idx` (per dimension), mapped into `[-L, L)`.
    ///
    /// Nodes are `x_n = n h` taken modulo the period, so the discrete
    /// transform carries no phase factor relative to the continuum Fourier
    /// series `sum_j c_j exp(i pi j x / L)`.
    pub fn node_coordinate(&self, idx: usize) -> T {
        T::of(idx) * self.spacing() - if idx < self.nx / 2 { T::zero() } else { T::lit(2.0) * self.half_width }
    }

    /// Coordinates of flat node index `nf` (same layout as Fourier indices).
    pub fn node(&self, nf: usize) -> [T; 2] {
        match self.dim {
            1 => [self.node_coordinate(nf), T::zero()],
            _ => [self.node_coordinate(nf / self.nx), self.node_coordinate(nf % self.nx)],
        }
    }

    /// `pi j / L`.
    #[inline]
    pub fn wavenumber(&self, j: isize) -> T {
        T::PI() * T::from_isize(j).expect("mode index") / self.half_width
    }

    /// Check that two specs describe the same discretization.
    pub fn ensure_same(&self, other: &Self) -> Result<()> {
        if self != other {
            return Err(KfpError::DomainMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }

    /// Relabel the scalar type.
    pub fn cast<S: Real>(&self) -> DomainSpec<S> {
        DomainSpec {
            dim: self.dim,
            half_width: S::lit(self.half_width.as_f64()),
            nx: self.nx,
            kv: self.kv,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(DomainSpec::<f64>::new(3, 1.0, 8, 4).is_err());
        assert!(DomainSpec::<f64>::new(1, 1.0, 7, 4).is_err());
        assert!(DomainSpec::<f64>::new(1, 1.0, 2, 4).is_err());
        assert!(DomainSpec::<f64>::new(1, 1.0, 8, 1).is_err());
        assert!(DomainSpec::<f64>::new(1, 0.0, 8, 4).is_err());
        assert!(DomainSpec::<f64>::new(1, 1.0, 8, 181).is_err());
        assert!(DomainSpec::<f64>::new(1, 1.0, 8, 180).is_ok());
        assert!(DomainSpec::<f64>::new(2, 1.0, 8, 4).is_ok());
    }

    #[test]
    fn index_round_trips() {
        let d = DomainSpec::<f64>::new(2, 1.0, 8, 3).unwrap();
        for jf in 0..d.n_fourier() {
            assert_eq!(d.fourier_flat(d.fourier_index(jf)), jf);
        }
        for kf in 0..d.n_hermite() {
            assert_eq!(d.hermite_flat(d.hermite_index(kf)), kf);
        }
        assert_eq!(d.hermite_index(d.unit_hermite(0)), [1, 0]);
        assert_eq!(d.hermite_index(d.unit_hermite(1)), [0, 1]);
        assert_eq!(d.hermite_index(d.unit_hermite(0) + d.hermite_stride(0)), [2, 0]);
    }

    #[test]
    fn nodes_cover_the_torus() {
        let d = DomainSpec::<f64>::new(1, std::f64::consts::PI, 8, 3).unwrap();
        let xs: Vec<f64> = (0..8).map(|n| d.node_coordinate(n)).collect();
        assert!(xs.iter().all(|&x| (-d.half_width..d.half_width).contains(&x)));
        assert_eq!(xs[0], 0.0);
        assert!((xs[4] + std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn two_thirds_cutoff() {
        let d = DomainSpec::<f64>::new(1, 1.0, 64, 3).unwrap();
        assert_eq!(d.dealias_cutoff(), 21);
        let d = DomainSpec::<f64>::new(1, 1.0, 32, 3).unwrap();
        assert_eq!(d.dealias_cutoff(), 10);
    }
}
