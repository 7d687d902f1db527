//! Hermite-Fourier spectral solver and tracking control for the nonlocal
//! kinetic Fokker-Planck equation written as a perturbation `f = mu (1 + y)`
//! of the Maxwellian `mu`:
//!
//! ```text
//! y_t = A y + D y - h1(y) - h2(y) + u N y + u B
//! ```
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

pub mod control;
pub mod domain;
pub mod error;
pub mod evolution;
pub mod fft;
pub mod field;
pub mod hermite;
pub mod io;
pub mod operators;
pub mod particles;
pub mod potential;
pub mod scalar;
pub mod space;
pub mod verify;

pub use control::{
    ControlSignal, CostBreakdown, DescentOptions, DescentResult, DescentStatus, TrackingProblem,
    UniquenessCertificate,
};
pub use domain::{DomainSpec, MAX_HERMITE_DEGREE};
pub use error::{KfpError, Result};
pub use evolution::{
    direct_march, linear_step, picard_solve, solve_linear, PicardOptions, PicardReport, Scheme,
    TimeGrid, Trajectory,
};
pub use field::SpectralField;
pub use hermite::BasisTables;
pub use operators::{Model, NormEstimate, Terms};
pub use particles::{
    estimate_stats, meanfield_compare, particle_step, EnsembleStats, KernelMode, MeanFieldOptions,
    MeanFieldReport, ParticleEnsemble, ParticleKernel,
};
pub use potential::{ControlShape, PotentialKind, PotentialSpec};
pub use scalar::{Complex, Real};
pub use space::{MomentFields, Space};
pub use verify::{CheckKind, CheckResult, ConstantsOptions, ConstantsTable};

pub type Domain = DomainSpec<f64>;
pub type Field = SpectralField<f64>;
pub type Potential = PotentialSpec<f64>;
pub type Alpha = ControlShape<f64>;
pub type Grid = Space<f64>;
