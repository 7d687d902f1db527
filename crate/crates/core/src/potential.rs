//! Communication potential `U` and control profile `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::scalar::{Complex, Real};
use crate::space::Space;

/// Radial profile of the communication rate. Parameters are in length units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `(2 pi sigma^2)^{-d/2} exp(-r^2 / 2 sigma^2)`, periodized.
    WrappedGaussian { sigma: f64 },
    /// `1 + cos(pi r / w)` on `r < w`, normalized.
    RaisedCosine { width: f64 },
    /// Indicator of the ball `r < w`, normalized.
    UniformBump { width: f64 },
}

impl Default for PotentialKind {
    fn default() -> Self {
        PotentialKind::WrappedGaussian { sigma: 0.5 }
    }
}

impl PotentialKind {
    /// Continuum profile with unit mass on `R^d`.
    pub fn profile(&self, r: f64, dim: usize) -> f64 {
        use std::f64::consts::PI;
        match *self {
            PotentialKind::WrappedGaussian { sigma } => {
                (2.0 * PI * sigma * sigma).powf(-(dim as f64) / 2.0) * (-r * r / (2.0 * sigma * sigma)).exp()
            }
            PotentialKind::RaisedCosine { width } => {
                if r >= width {
                    return 0.0;
                }
                let mass = if dim == 1 { 2.0 * width } else { PI * width * width * (1.0 - 4.0 / (PI * PI)) };
                (1.0 + (PI * r / width).cos()) / mass
            }
            PotentialKind::UniformBump { width } => {
                if r >= width {
                    return 0.0;
                }
                if dim == 1 {
                    0.5 / width
                } else {
                    1.0 / (PI * width * width)
                }
            }
        }
    }

    fn validate(&self, half_width: f64) -> Result<()> {
        let (name, value, max) = match *self {
            PotentialKind::WrappedGaussian { sigma } => ("sigma", sigma, half_width / 3.0),
            PotentialKind::RaisedCosine { width } => ("width", width, half_width),
            PotentialKind::UniformBump { width } => ("width", width, half_width),
        };
        if !(value > 0.0 && value <= max) {
            return Err(KfpError::InvalidParameter {
                name,
                reason: format!("must lie in (0, {max}], got {value}"),
            });
        }
        Ok(())
    }
}

/// Sampled potential with its Fourier data and norms.
#[derive(Clone, Debug)]
pub struct PotentialSpec<T> {
    pub kind: PotentialKind,
    /// Nodal values of the periodized, grid-renormalized potential.
    pub values: Vec<T>,
    /// Fourier coefficients; `coeffs[0] * (2L)^d = 1`.
    pub coeffs: Vec<Complex<T>>,
    /// Convolution multiplier `(2L)^d * coeffs`.
    pub symbol: Vec<Complex<T>>,
    pub norm_l1: T,
    pub norm_l2: T,
    /// Factor applied to the continuum profile so that the grid mass is one.
    pub renorm: f64,
    dim: usize,
    period: f64,
}

impl<T: Real> PotentialSpec<T> {
    pub fn new(space: &Space<T>, kind: PotentialKind) -> Result<Self> {
        let d = &space.domain;
        let half = d.half_width.as_f64();
        kind.validate(half)?;
        let period = 2.0 * half;
        let nf = d.n_fourier();
        let raw: Vec<f64> = (0..nf)
            .map(|nfi| {
                let x = d.node(nfi);
                periodized(&kind, [x[0].as_f64(), x[1].as_f64()], d.dim, period)
            })
            .collect();
        let h = d.cell_volume().as_f64();
        let mass: f64 = raw.iter().sum::<f64>() * h;
        let renorm = 1.0 / mass;
        let values: Vec<T> = raw.iter().map(|&u| T::lit(u * renorm)).collect();
        let coeffs = space.real_to_coeffs(&values);
        let vol = d.volume();
        let symbol = coeffs.iter().map(|c| c.scale(vol)).collect();
        let cell = d.cell_volume();
        let norm_l1 = cell * values.iter().map(|u| u.abs()).sum::<T>();
        let norm_l2 = space.nodal_l2(&values);
        Ok(Self { kind, values, coeffs, symbol, norm_l1, norm_l2, renorm, dim: d.dim, period })
    }

    /// `U * g` for spatial coefficients `g` (periodic convolution).
    pub fn convolve(&self, g: &[Complex<T>]) -> Vec<Complex<T>> {
        g.iter().zip(&self.symbol).map(|(a, s)| a * s).collect()
    }

    /// `U * g` for a real nodal field, returned nodal.
    pub fn convolve_nodal(&self, space: &Space<T>, g: &[T]) -> Result<Vec<T>> {
        if g.len() != self.values.len() {
            return Err(KfpError::DomainMismatch(format!(
                "field has {} nodes, potential has {}",
                g.len(),
                self.values.len()
            )));
        }
        let coeffs = self.convolve(&space.real_to_coeffs(g));
        Ok(space.to_nodal(&coeffs).into_iter().map(|c| c.re).collect())
    }

    /// Periodized potential at displacement `dx`, one image shell, grid-renormalized.
    pub fn periodized(&self, dx: [f64; 2]) -> f64 {
        self.renorm * periodized(&self.kind, dx, self.dim, self.period)
    }

    /// Exact Fourier-series coefficient of the fully periodized Gaussian
    /// (including the grid renormalization) for mode `l`; `None` for kernels
    /// without a closed form.
    pub fn series_coefficient(&self, l: [isize; 2]) -> Option<f64> {
        match self.kind {
            PotentialKind::WrappedGaussian { sigma } => {
                let half = self.period / 2.0;
                let mut c = self.renorm;
                for &li in &l[..self.dim] {
                    let xi = std::f64::consts::PI * li as f64 / half;
                    c *= (-0.5 * sigma * sigma * xi * xi).exp() / self.period;
                }
                Some(c)
            }
            _ => None,
        }
    }

    /// Smallest mode count `M` such that series coefficients beyond `|l| = M`
    /// fall below `tol` relative to the mean.
    pub fn series_cutoff(&self, tol: f64) -> Option<usize> {
        match self.kind {
            PotentialKind::WrappedGaussian { sigma } => {
                let half = self.period / 2.0;
                let xi_max = (-2.0 * tol.ln()).sqrt() / sigma;
                Some((xi_max * half / std::f64::consts::PI).ceil() as usize)
            }
            _ => None,
        }
    }
}

fn periodized(kind: &PotentialKind, x: [f64; 2], dim: usize, period: f64) -> f64 {
    let mut s = 0.0;
    match dim {
        1 => {
            for z in -1..=1 {
                s += kind.profile((x[0] + period * z as f64).abs(), 1);
            }
        }
        _ => {
            for z1 in -1..=1 {
                for z2 in -1..=1 {
                    let a = x[0] + period * z1 as f64;
                    let b = x[1] + period * z2 as f64;
                    s += kind.profile((a * a + b * b).sqrt(), 2);
                }
            }
        }
    }
    s
}

/// Spatial control profile `alpha(x)`, one component per velocity direction.
///
/// Stored band-limited to the 2/3 dealiasing band so that products with it
/// are exact on the grid.
#[derive(Clone, Debug)]
pub struct ControlShape<T> {
    pub components: Vec<Vec<Complex<T>>>,
    pub nodal: Vec<Vec<T>>,
    pub norm_l2: T,
    pub norm_linf: T,
}

impl<T: Real> ControlShape<T> {
    pub fn from_nodal(space: &Space<T>, nodal: Vec<Vec<T>>) -> Result<Self> {
        if nodal.len() != space.dim() || nodal.iter().any(|c| c.len() != space.n_fourier()) {
            return Err(KfpError::DomainMismatch("control shape has wrong layout".into()));
        }
        if nodal.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KfpError::InvalidParameter { name: "alpha", reason: "non-finite value".into() });
        }
        let components: Vec<Vec<Complex<T>>> = nodal
            .iter()
            .map(|c| {
                let mut coeffs = space.real_to_coeffs(c);
                space.dealias(&mut coeffs);
                coeffs
            })
            .collect();
        let nodal: Vec<Vec<T>> = components
            .iter()
            .map(|c| space.to_nodal(c).into_iter().map(|z| z.re).collect())
            .collect();
        let norm_l2 = components.iter().map(|c| space.coeff_l2(c).powi(2)).sum::<T>().sqrt();
        let norm_linf = (0..space.n_fourier())
            .map(|n| nodal.iter().map(|c| c[n] * c[n]).sum::<T>().sqrt())
            .fold(T::zero(), T::max);
        Ok(Self { components, nodal, norm_l2, norm_linf })
    }

    pub fn zero(space: &Space<T>) -> Self {
        Self::from_nodal(space, vec![vec![T::zero(); space.n_fourier()]; space.dim()]).expect("valid layout")
    }

    /// `alpha(x) = value` for every `x`.
    pub fn constant(space: &Space<T>, value: [T; 2]) -> Self {
        let nodal = (0..space.dim()).map(|i| vec![value[i]; space.n_fourier()]).collect();
        Self::from_nodal(space, nodal).expect("valid layout")
    }

    /// Centered Gaussian bump of the given width pointing along `direction`,
    /// rescaled so that `|alpha|_{L^inf} = amplitude`.
    pub fn gaussian_bump(space: &Space<T>, width: f64, amplitude: f64, direction: [f64; 2]) -> Result<Self> {
        if !(width > 0.0) {
            return Err(KfpError::InvalidParameter { name: "alpha.width", reason: format!("{width}") });
        }
        let d = &space.domain;
        let dnorm = direction[..d.dim].iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(dnorm > 0.0) {
            return Err(KfpError::InvalidParameter { name: "alpha.direction", reason: "zero vector".into() });
        }
        let kind = PotentialKind::WrappedGaussian { sigma: width };
        let period = 2.0 * d.half_width.as_f64();
        let bump: Vec<f64> = (0..d.n_fourier())
            .map(|n| {
                let x = d.node(n);
                periodized(&kind, [x[0].as_f64(), x[1].as_f64()], d.dim, period)
            })
            .collect();
        let nodal = (0..d.dim)
            .map(|i| bump.iter().map(|&b| T::lit(b * direction[i] / dnorm)).collect())
            .collect();
        let shape = Self::from_nodal(space, nodal)?;
        if shape.norm_linf == T::zero() {
            return Ok(shape);
        }
        let s = T::lit(amplitude) / shape.norm_linf;
        let nodal = shape.nodal.iter().map(|c| c.iter().map(|&v| v * s).collect()).collect();
        Self::from_nodal(space, nodal)
    }

    /// `alpha_i` at an arbitrary position (trigonometric interpolant).
    pub fn evaluate(&self, space: &Space<T>, x: [f64; 2]) -> [f64; 2] {
        let d = &space.domain;
        let mut out = [0.0; 2];
        for (i, comp) in self.components.iter().enumerate() {
            let mut acc = 0.0;
            for (jf, c) in comp.iter().enumerate() {
                if c.norm_sqr() == T::zero() {
                    continue;
                }
                let j = d.fourier_index(jf);
                let phase = (0..d.dim).map(|a| d.wavenumber(j[a]).as_f64() * x[a]).sum::<f64>();
                acc += c.re.as_f64() * phase.cos() - c.im.as_f64() * phase.sin();
            }
            out[i] = acc;
        }
        out
    }
}
