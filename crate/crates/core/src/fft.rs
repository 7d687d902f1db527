//! Periodic transforms between nodal values and Fourier coefficients.
//!
//! Convention: `f(x_n) = sum_j c_j exp(i pi j x_n / L)` and
//! `c_j = N^{-d} sum_n f(x_n) exp(-i pi j x_n / L)`.

use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use crate::domain::DomainSpec;
use crate::scalar::{Complex, Real};

#[derive(Clone)]
pub struct SpatialFft<T: Real> {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scale: T,
}

impl<T: Real> std::fmt::Debug for SpatialFft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpatialFft").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

impl<T: Real> SpatialFft<T> {
    pub fn new(domain: &DomainSpec<T>) -> Self {
        let mut planner = FftPlanner::new();
        let n = domain.nx;
        Self {
            dim: domain.dim,
            n,
            forward: planner.plan_fft(n, FftDirection::Forward),
            inverse: planner.plan_fft(n, FftDirection::Inverse),
            scale: T::one() / T::of(domain.n_fourier()),
        }
    }

    /// Nodal values to coefficients, in place.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.run(&self.forward, data);
        for c in data.iter_mut() {
            *c = c.scale(self.scale);
        }
    }

    /// Coefficients to nodal values, in place.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.run(&self.inverse, data);
    }

    fn run(&self, plan: &Arc<dyn Fft<T>>, data: &mut [Complex<T>]) {
        let n = self.n;
        debug_assert_eq!(data.len(), n.pow(self.dim as u32));
        let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
        // Rows (last dimension, contiguous).
        plan.process_with_scratch(data, &mut scratch);
        if self.dim == 2 {
            let mut column = vec![Complex::default(); n];
            for c in 0..n {
                for r in 0..n {
                    column[r] = data[r * n + c];
                }
                plan.process_with_scratch(&mut column, &mut scratch);
                for r in 0..n {
                    data[r * n + c] = column[r];
                }
            }
        }
    }
}
