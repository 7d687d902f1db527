//! Run configuration: a TOML file, optionally patched by `--override
//! key=value` pairs, validated before any computation starts.
//!
//! All quantities are dimensionless. Positions live on `[-L, L)^d`,
//! velocities are measured in units of the Maxwellian's standard deviation,
//! and the potential has unit mass.

use std::path::PathBuf;

use kfp_core::particles::KernelMode;
use kfp_core::{Alpha, Complex, ControlSignal, Domain, Field, Grid, Model, Potential, PotentialKind, Scheme, Terms, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Picard,
    Optimize,
    Particles,
    Verify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Picard => "picard",
            Mode::Optimize => "optimize",
            Mode::Particles => "particles",
            Mode::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub dim: usize,
    /// Torus half-width `L`.
    pub half_width: f64,
    pub nx: usize,
    pub kv: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        let d = Domain::default_1d();
        Self { dim: d.dim, half_width: d.half_width, nx: d.nx, kv: d.kv }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaConfig {
    /// Width of the Gaussian bump (length units).
    pub width: f64,
    /// Peak magnitude `|alpha|_inf`.
    pub amplitude: f64,
    pub direction: [f64; 2],
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self { width: 0.8, amplitude: 1.0, direction: [1.0, 0.0] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
    pub scheme: Scheme,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 100, scheme: Scheme::ImexEuler }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    Zero,
    /// `amplitude cos(pi mode x_1 / L) h_k(v_1)`.
    Cosine,
    /// Seeded random field with `|y0|_Y = amplitude`.
    Random,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub profile: InitialProfile,
    pub amplitude: f64,
    /// Spatial wavenumber index for `cosine`.
    pub mode: usize,
    /// Hermite degree in `v_1` for `cosine`.
    pub hermite: usize,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { profile: InitialProfile::Cosine, amplitude: 1e-2, mode: 1, hermite: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlProfile {
    Zero,
    Constant,
    /// `amplitude sin(2 pi frequency t)`.
    Sine,
    /// Values from the `u` column of `file`, one per step.
    File,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub profile: ControlProfile,
    pub amplitude: f64,
    pub frequency: f64,
    pub file: Option<PathBuf>,
    pub lower: f64,
    pub upper: f64,
    /// Control cost weight in the tracking functional.
    pub beta: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            profile: ControlProfile::Zero,
            amplitude: 0.0,
            frequency: 1.0,
            file: None,
            lower: -1.0,
            upper: 1.0,
            beta: 1e-3,
        }
    }
}

/// Desired state for `optimize`: the flow driven by a generating control,
/// or zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub profile: ControlProfile,
    pub amplitude: f64,
    pub frequency: f64,
    pub file: Option<PathBuf>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { profile: ControlProfile::Sine, amplitude: 0.5, frequency: 1.0, file: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub initial_step: f64,
    /// Sampled forward runs for the state-bound surrogate in the certificate.
    pub state_samples: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, initial_step: 1.0, state_samples: 6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesConfig {
    pub counts: Vec<usize>,
    pub replicates: usize,
    pub noise: bool,
    pub kernel: KernelMode,
    /// Steps at which ensembles are compared; empty means the final step.
    pub output_steps: Vec<usize>,
    /// Write a particle snapshot of replicate 0 for the first count.
    pub snapshot: bool,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        Self {
            counts: vec![1000, 10_000],
            replicates: 8,
            noise: true,
            kernel: KernelMode::Auto,
            output_steps: Vec::new(),
            snapshot: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub identity_samples: usize,
    pub inequality_samples: usize,
    pub constants: bool,
    pub batch_size: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { identity_samples: 100, inequality_samples: 200, constants: true, batch_size: 50 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Also write the binary coefficient dump of the trajectory.
    pub dump: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub potential: PotentialKind,
    #[serde(default)]
    pub alpha: AlphaConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub particles: ParticlesConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Which parts of the right-hand side are active.
    #[serde(default)]
    pub terms: Terms,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

/// Sets `path` (dotted) in `table` to `raw`, parsed as a TOML value when
/// possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid("--override", format!("expected key=value, got `{assignment}`")))?;
    let value = raw
        .trim()
        .parse::<toml::Value>()
        .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(invalid("--override", format!("bad key `{path}`")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid("--override", format!("`{k}` in `{path}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies the overrides, and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| invalid("config", e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid("config", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn domain(&self) -> Domain {
        Domain { dim: self.domain.dim, half_width: self.domain.half_width, nx: self.domain.nx, kv: self.domain.kv }
    }

    pub fn grid(&self) -> Result<TimeGrid<f64>, CliError> {
        TimeGrid::new(self.time.horizon, self.time.steps).map_err(|e| invalid("time", e))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let domain = self.domain();
        domain.validate().map_err(|e| invalid("domain", e))?;
        let grid = self.grid()?;
        let space = Grid::new(domain).map_err(|e| invalid("domain", e))?;
        Potential::new(&space, self.potential).map_err(|e| invalid("potential", e))?;
        Alpha::gaussian_bump(&space, self.alpha.width, self.alpha.amplitude, self.alpha.direction)
            .map_err(|e| invalid("alpha", e))?;
        if !(self.alpha.amplitude >= 0.0) {
            return Err(invalid("alpha.amplitude", "must be >= 0"));
        }
        if !(self.initial.amplitude.is_finite() && self.initial.amplitude >= 0.0) {
            return Err(invalid("initial.amplitude", "must be finite and >= 0"));
        }
        if self.initial.profile == InitialProfile::Cosine {
            let cutoff = domain.dealias_cutoff();
            if self.initial.mode == 0 || self.initial.mode as isize > cutoff {
                return Err(invalid("initial.mode", format!("must lie in 1..={cutoff}")));
            }
            if self.initial.hermite > domain.kv {
                return Err(invalid("initial.hermite", format!("must be <= kv = {}", domain.kv)));
            }
        }
        let c = &self.control;
        if !(c.lower <= 0.0 && c.upper >= 0.0) {
            return Err(invalid("control", format!("bounds must satisfy lower <= 0 <= upper, got [{}, {}]", c.lower, c.upper)));
        }
        if !(c.beta > 0.0) {
            return Err(invalid("control.beta", "must be > 0"));
        }
        self.control_signal(&grid)?;
        if self.mode == Mode::Optimize {
            self.target_control(&grid)?;
        }
        if self.time.scheme == Scheme::CrankNicolson && self.mode != Mode::Verify {
            let control_active = self.terms.control && c.profile != ControlProfile::Zero;
            if self.mode != Mode::Simulate || self.terms.nonlinear || control_active {
                return Err(invalid(
                    "time.scheme",
                    "crank-nicolson is only available for `simulate` with terms.nonlinear = false and no active control",
                ));
            }
        }
        if !(self.picard.tol > 0.0) || self.picard.max_iter == 0 {
            return Err(invalid("picard", "tol must be > 0 and max_iter >= 1"));
        }
        if !(self.optimizer.tol > 0.0 && self.optimizer.initial_step > 0.0) {
            return Err(invalid("optimizer", "tol and initial_step must be > 0"));
        }
        let p = &self.particles;
        if self.mode == Mode::Particles {
            if p.counts.is_empty() || p.counts.contains(&0) {
                return Err(invalid("particles.counts", "need at least one positive count"));
            }
            if p.replicates < 2 {
                return Err(invalid("particles.replicates", "must be >= 2"));
            }
            if let Some(s) = p.output_steps.iter().find(|&&s| s > grid.steps) {
                return Err(invalid("particles.output_steps", format!("{s} exceeds time.steps = {}", grid.steps)));
            }
        }
        if self.mode == Mode::Verify && (self.verify.identity_samples == 0 || self.verify.inequality_samples == 0 || self.verify.batch_size == 0) {
            return Err(invalid("verify", "sample counts must be >= 1"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model<f64>, CliError> {
        let space = Grid::new(self.domain()).map_err(|e| invalid("domain", e))?;
        let u = Potential::new(&space, self.potential).map_err(|e| invalid("potential", e))?;
        let a = Alpha::gaussian_bump(&space, self.alpha.width, self.alpha.amplitude, self.alpha.direction)
            .map_err(|e| invalid("alpha", e))?;
        Ok(Model::new(space, u, a).with_terms(self.terms))
    }

    pub fn initial_field(&self) -> Field {
        let d = self.domain();
        let i = &self.initial;
        match i.profile {
            InitialProfile::Zero => Field::zeros(d),
            InitialProfile::Cosine => {
                let mut y = Field::zeros(d);
                let j = i.mode as isize;
                y.set([j, 0], [i.hermite, 0], Complex::new(0.5 * i.amplitude, 0.0));
                y.set([-j, 0], [i.hermite, 0], Complex::new(0.5 * i.amplitude, 0.0));
                y
            }
            InitialProfile::Random => Field::random(d, &mut ChaCha8Rng::seed_from_u64(self.seed), i.amplitude),
        }
    }

    fn signal(
        &self,
        grid: &TimeGrid<f64>,
        field: &str,
        profile: ControlProfile,
        amplitude: f64,
        frequency: f64,
        file: Option<&PathBuf>,
    ) -> Result<ControlSignal<f64>, CliError> {
        let n = grid.steps;
        let values: Vec<f64> = match profile {
            ControlProfile::Zero => vec![0.0; n],
            ControlProfile::Constant => vec![amplitude; n],
            ControlProfile::Sine => (0..n)
                .map(|k| amplitude * (2.0 * std::f64::consts::PI * frequency * grid.time(k)).sin())
                .collect(),
            ControlProfile::File => {
                let path = file.ok_or_else(|| invalid(field, "profile `file` needs `file`"))?;
                let v = kfp_core::io::read_control_csv(path).map_err(|e| invalid(field, e))?;
                if v.len() != n {
                    return Err(invalid(field, format!("{} has {} values, time.steps = {n}", path.display(), v.len())));
                }
                v
            }
        };
        ControlSignal::new(grid, values, vec![self.control.lower; n], vec![self.control.upper; n]).map_err(|e| invalid(field, e))
    }

    pub fn control_signal(&self, grid: &TimeGrid<f64>) -> Result<ControlSignal<f64>, CliError> {
        let c = &self.control;
        self.signal(grid, "control", c.profile, c.amplitude, c.frequency, c.file.as_ref())
    }

    pub fn target_control(&self, grid: &TimeGrid<f64>) -> Result<ControlSignal<f64>, CliError> {
        let t = &self.target;
        self.signal(grid, "target", t.profile, t.amplitude, t.frequency, t.file.as_ref())
    }
}
