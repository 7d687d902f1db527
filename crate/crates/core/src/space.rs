//! The discrete phase space: domain, transforms and precomputed index tables.

use crate::domain::DomainSpec;
use crate::error::{KfpError, Result};
use crate::fft::SpatialFft;
use crate::field::SpectralField;
use crate::hermite::{build_basis, BasisTables};
use crate::scalar::{Complex, Real};

#[derive(Clone, Debug)]
pub struct Space<T: Real> {
    pub domain: DomainSpec<T>,
    pub basis: BasisTables<T>,
    fft: SpatialFft<T>,
    /// Wavenumbers per flat Fourier index; zero on Nyquist components.
    xi: Vec<[T; 2]>,
    /// 2/3-rule mask per flat Fourier index.
    band: Vec<bool>,
}

/// Density and momentum moments of a perturbation, on the nodal grid.
#[derive(Clone, Debug)]
pub struct MomentFields<T> {
    /// `rho_{mu y}(x) = int mu y dv`.
    pub rho: Vec<T>,
    /// `rho_{mu v y}(x)`, one nodal field per velocity component.
    pub rho_v: Vec<Vec<T>>,
}

impl<T: Real> Space<T> {
    pub fn new(domain: DomainSpec<T>) -> Result<Self> {
        let basis = build_basis(&domain)?;
        let fft = SpatialFft::new(&domain);
        let nf = domain.n_fourier();
        let xi = (0..nf)
            .map(|jf| {
                let j = domain.fourier_index(jf);
                let half = -(domain.nx as isize / 2);
                let mut w = [T::zero(); 2];
                for i in 0..domain.dim {
                    if j[i] != half {
                        w[i] = domain.wavenumber(j[i]);
                    }
                }
                w
            })
            .collect();
        let band = (0..nf).map(|jf| domain.in_dealias_band(jf)).collect();
        Ok(Self { domain, basis, fft, xi, band })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    #[inline]
    pub fn n_fourier(&self) -> usize {
        self.domain.n_fourier()
    }

    /// Wavenumber vector used by spatial derivatives (Nyquist components zeroed).
    #[inline]
    pub fn xi(&self, jf: usize) -> [T; 2] {
        self.xi[jf]
    }

    #[inline]
    pub fn in_band(&self, jf: usize) -> bool {
        self.band[jf]
    }

    pub fn zeros(&self) -> SpectralField<T> {
        SpectralField::zeros(self.domain)
    }

    pub fn check(&self, field: &SpectralField<T>) -> Result<()> {
        self.domain.ensure_same(&field.domain)
    }

    /// Spatial coefficients to nodal values.
    pub fn to_nodal(&self, coeffs: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut data = coeffs.to_vec();
        self.fft.inverse(&mut data);
        data
    }

    /// Nodal values to spatial coefficients.
    pub fn to_coeffs(&self, nodal: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut data = nodal.to_vec();
        self.fft.forward(&mut data);
        data
    }

    pub fn real_to_coeffs(&self, nodal: &[T]) -> Vec<Complex<T>> {
        let mut data: Vec<Complex<T>> = nodal.iter().map(|&r| Complex::new(r, T::zero())).collect();
        self.fft.forward(&mut data);
        data
    }

    pub fn inverse_in_place(&self, data: &mut [Complex<T>]) {
        self.fft.inverse(data);
    }

    pub fn forward_in_place(&self, data: &mut [Complex<T>]) {
        self.fft.forward(data);
    }

    /// Zero every coefficient outside the 2/3 band.
    pub fn dealias(&self, coeffs: &mut [Complex<T>]) {
        for (c, &keep) in coeffs.iter_mut().zip(&self.band) {
            if !keep {
                *c = Complex::default();
            }
        }
    }

    /// Spatial field whose nodal values are the complex conjugates of those of `coeffs`.
    pub fn conj_spatial(&self, coeffs: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..coeffs.len())
            .map(|jf| coeffs[self.domain.negated_fourier(jf)].conj())
            .collect()
    }

    /// Velocity moments, returned as real nodal fields.
    ///
    /// Errors when the imaginary residue exceeds `1e-10 * |y|_Y`, which means
    /// the field does not represent a real perturbation.
    pub fn moments(&self, y: &SpectralField<T>) -> Result<MomentFields<T>> {
        self.check(y)?;
        let limit = T::lit(1e-10) * y.norm_y().max(T::min_positive_value());
        let mut residue = T::zero();
        let mut real_part = |coeffs: &[Complex<T>]| {
            let nodal = self.to_nodal(coeffs);
            nodal
                .iter()
                .map(|c| {
                    residue = residue.max(c.im.abs());
                    c.re
                })
                .collect::<Vec<T>>()
        };
        let rho = real_part(y.slice(0));
        let rho_v = (0..self.dim())
            .map(|i| real_part(y.slice(self.domain.unit_hermite(i))))
            .collect();
        if residue > limit {
            return Err(KfpError::ComplexMoment { residue: residue.as_f64(), limit: limit.as_f64() });
        }
        Ok(MomentFields { rho, rho_v })
    }

    /// Discrete `L^2` norm of a nodal field on the torus.
    pub fn nodal_l2(&self, values: &[T]) -> T {
        (self.domain.cell_volume() * values.iter().map(|&v| v * v).sum::<T>()).sqrt()
    }

    /// Discrete `L^2` norm of a spatial coefficient array.
    pub fn coeff_l2(&self, coeffs: &[Complex<T>]) -> T {
        (self.domain.volume() * coeffs.iter().map(|c| c.norm_sqr()).sum::<T>()).sqrt()
    }

    /// Nodal evaluation of `y` at the Gauss-Hermite velocity nodes, `[node][q_1 * nq + q_2]`.
    ///
    /// Oracle path only.
    pub fn nodal_phase_space(&self, y: &SpectralField<T>) -> Vec<Vec<Complex<T>>> {
        let d = &self.domain;
        let nq = self.basis.nodes.len();
        let nv = nq.pow(d.dim as u32);
        let nf = d.n_fourier();
        let slices: Vec<Vec<Complex<T>>> = (0..d.n_hermite()).map(|kf| self.to_nodal(y.slice(kf))).collect();
        let mut out = vec![vec![Complex::default(); nv]; nf];
        for (qv, _) in (0..nv).enumerate() {
            let q = if d.dim == 1 { [qv, 0] } else { [qv / nq, qv % nq] };
            for kf in 0..d.n_hermite() {
                let k = d.hermite_index(kf);
                let mut h = self.basis.values[q[0]][k[0]];
                if d.dim == 2 {
                    h *= self.basis.values[q[1]][k[1]];
                }
                for nfi in 0..nf {
                    out[nfi][qv] += slices[kf][nfi].scale(h);
                }
            }
        }
        out
    }

    /// Product quadrature weight of velocity node index `qv`.
    pub fn velocity_weight(&self, qv: usize) -> T {
        let nq = self.basis.nodes.len();
        if self.dim() == 1 {
            self.basis.weights[qv]
        } else {
            self.basis.weights[qv / nq] * self.basis.weights[qv % nq]
        }
    }
}
