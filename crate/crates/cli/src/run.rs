use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kfp_core::control::{empirical_state_bound, projected_gradient_descent, CertificateInputs, DescentStatus};
use kfp_core::io;
use kfp_core::particles::{estimate_stats, meanfield_compare, particle_step, MeanFieldOptions, ParticleEnsemble, ParticleKernel};
use kfp_core::verify::{check_identity_suite, check_inequality_suite, estimate_constants, summarize, ConstantsOptions};
use kfp_core::{direct_march, picard_solve, solve_linear, DescentOptions, PicardOptions, Scheme, TrackingProblem, UniquenessCertificate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub status: String,
    pub exit_code: u8,
    pub wall_time_s: f64,
    pub coeff_dump_version: u32,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

struct Outcome {
    files: Vec<PathBuf>,
    summary: serde_json::Value,
    status: &'static str,
    code: u8,
}

fn checksum(path: &Path) -> Result<Artifact, CliError> {
    let bytes = fs::read(path)?;
    Ok(Artifact {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<u8, CliError> {
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("kfp-out/{}", cfg.mode.name())));
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    log::info!("{} run, seed {}, output {}", cfg.mode.name(), cfg.seed, out.display());
    let result = match cfg.mode {
        Mode::Simulate => simulate(cfg, &out),
        Mode::Picard => picard(cfg, &out),
        Mode::Optimize => optimize(cfg, &out),
        Mode::Particles => particles(cfg, &out),
        Mode::Verify => verify(cfg, &out),
    };
    let wall = start.elapsed().as_secs_f64();
    let (outcome, err) = match result {
        Ok(o) => (o, None),
        Err(e) => {
            let status = match &e {
                CliError::Core(kfp_core::KfpError::BlowUp { .. }) => "blow-up",
                CliError::Validation(_) => "invalid",
                _ => "error",
            };
            let o = Outcome { files: Vec::new(), summary: json!({ "error": e.to_string() }), status, code: e.exit_code() };
            (o, Some(e))
        }
    };
    let artifacts = outcome.files.iter().map(|p| checksum(p)).collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        tool: "kfp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode: cfg.mode.name().into(),
        seed: cfg.seed,
        status: outcome.status.into(),
        exit_code: outcome.code,
        wall_time_s: wall,
        coeff_dump_version: io::DUMP_VERSION,
        config: serde_json::to_value(cfg).map_err(anyhow::Error::from)?,
        summary: outcome.summary,
        artifacts,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    log::info!("{} in {wall:.2}s, status {}", cfg.mode.name(), manifest.status);
    match err {
        Some(e) => Err(e),
        None => Ok(outcome.code),
    }
}

fn trajectory_files(cfg: &RunConfig, out: &Path, traj: &kfp_core::Trajectory<f64>, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let p = out.join("trajectory.csv");
    io::write_trajectory_csv(&p, traj)?;
    files.push(p);
    if cfg.output.dump {
        let p = out.join("coefficients.bin");
        io::write_coeff_dump(&p, traj)?;
        files.push(p);
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let y0 = cfg.initial_field();
    let u = cfg.control_signal(&grid)?;
    let traj = match cfg.time.scheme {
        Scheme::ImexEuler => direct_march(&model, &y0, &u, &grid)?,
        Scheme::CrankNicolson => solve_linear(&model, &y0, &grid, Scheme::CrankNicolson, |_| model.space.zeros())?.trajectory,
    };
    let mut files = Vec::new();
    trajectory_files(cfg, out, &traj, &mut files)?;
    let p = out.join("control.csv");
    io::write_control_csv(&p, &u, &grid)?;
    files.push(p);
    let summary = json!({
        "y0_norm": y0.norm_y(),
        "final_norm": traj.final_state().norm_y(),
        "max_norm": traj.linf_y(),
        "triple_norm": traj.triple_norm(),
        "cfl": kfp_core::evolution::cfl_number(&model, grid.dt()),
    });
    Ok(Outcome { files, summary, status: "ok", code: 0 })
}

fn picard(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let y0 = cfg.initial_field();
    let u = cfg.control_signal(&grid)?;
    let opts = PicardOptions { tol: cfg.picard.tol, max_iter: cfg.picard.max_iter, n_norm: None };
    let (traj, report) = picard_solve(&model, &y0, &u, &grid, &opts)?;
    let mut files = Vec::new();
    trajectory_files(cfg, out, &traj, &mut files)?;
    let p = out.join("picard_residuals.csv");
    let mut w = csv::Writer::from_path(&p).map_err(kfp_core::KfpError::from)?;
    w.write_record(["iter", "residual"]).map_err(kfp_core::KfpError::from)?;
    for (i, r) in report.residuals.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()]).map_err(kfp_core::KfpError::from)?;
    }
    w.flush()?;
    files.push(p);
    if !report.feasibility.certified {
        log::warn!("data lie outside the certified small-data regime; convergence is empirical");
    }
    let summary = json!({
        "converged": report.converged,
        "iterates": report.iterates,
        "observed_rate": report.observed_rate,
        "final_residual": report.residuals.last(),
        "feasibility": report.feasibility,
    });
    let status = if report.converged { "ok" } else { "not-converged" };
    Ok(Outcome { files, summary, status, code: 0 })
}

fn optimize(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let y0 = cfg.initial_field();
    let generating = cfg.target_control(&grid)?;
    let target = direct_march(&model, &y0, &generating, &grid)?;
    let problem = TrackingProblem::new(&model, &y0, &target, cfg.control.beta)?;
    let u0 = cfg.control_signal(&grid)?;
    let opts = DescentOptions {
        max_iter: cfg.optimizer.max_iter,
        tol: cfg.optimizer.tol,
        initial_step: cfg.optimizer.initial_step,
        ..DescentOptions::default()
    };
    let res = projected_gradient_descent(&problem, &u0, &opts)?;
    let state = direct_march(&model, &y0, &res.control, &grid)?;
    let mut files = Vec::new();
    let p = out.join("optimizer_log.csv");
    io::write_descent_log_csv(&p, &res.log)?;
    files.push(p);
    let p = out.join("control.csv");
    io::write_control_csv(&p, &res.control, &grid)?;
    files.push(p);
    trajectory_files(cfg, out, &state, &mut files)?;
    let p = out.join("target_trajectory.csv");
    io::write_trajectory_csv(&p, &target)?;
    files.push(p);

    let copts = ConstantsOptions {
        batch_size: cfg.verify.batch_size,
        state_samples: 0,
        seed: cfg.seed,
        ..ConstantsOptions::default()
    };
    let constants = estimate_constants(&model, &grid, &copts)?;
    let u_inf = res.control.bound_sup();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de);
    let state_bound = empirical_state_bound(&model, &grid, y0.norm_y(), u_inf, cfg.optimizer.state_samples, &mut rng)?;
    let cert = UniquenessCertificate::evaluate(CertificateInputs {
        dim: model.space.dim(),
        y0_norm: y0.norm_y(),
        u_inf,
        target_norm: target.l2_vv(),
        c_hat: constants.c_hat,
        kappa: constants.kappa,
        n_norm: constants.n_norm,
        potential_l2: constants.potential_l2,
        state_bound,
    });
    let p = out.join("certificate.json");
    write_json(&p, &json!({ "certificate": cert, "violations": cert.violations(), "state_bound_is_empirical": true }))?;
    files.push(p);
    let j0 = problem.evaluate(&u0)?.cost.total;
    let (status, code) = match res.status {
        DescentStatus::Stationary => ("ok", 0),
        DescentStatus::MaxIterations => ("max-iterations", 0),
        DescentStatus::Stalled => ("stalled", 4),
    };
    let summary = json!({
        "initial_cost": j0,
        "final_cost": res.cost,
        "iterations": res.log.len() - 1,
        "descent_status": format!("{:?}", res.status),
        "control_l2_sq": res.control.integral_sq(),
        "generating_control_l2_sq": generating.integral_sq(),
        "certificate_holds": cert.holds,
    });
    Ok(Outcome { files, summary, status, code })
}

fn particles(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let y0 = cfg.initial_field();
    let u = cfg.control_signal(&grid)?;
    let pde = direct_march(&model, &y0, &u, &grid)?;
    let pc = &cfg.particles;
    let steps = if pc.output_steps.is_empty() { vec![grid.steps] } else { pc.output_steps.clone() };
    let opts = MeanFieldOptions { replicates: pc.replicates, seed: cfg.seed, noise: pc.noise, kernel: pc.kernel, ..Default::default() };
    let mut reports = Vec::new();
    for &m in &pc.counts {
        log::info!("particles: m = {m}, {} replicates", pc.replicates);
        reports.push(meanfield_compare(&model, &y0, &u, &pde, m, &steps, &opts)?);
    }
    let mut files = Vec::new();
    let p = out.join("meanfield.csv");
    io::write_meanfield_csv(&p, &reports)?;
    files.push(p);
    if pc.snapshot {
        let kernel = ParticleKernel::new(&model.space, &model.potential, pc.kernel, opts.series_tol)?;
        let mut ens = ParticleEnsemble::sample(&model.space, &y0, pc.counts[0], cfg.seed, 0)?;
        let last = steps.iter().copied().max().unwrap_or(0);
        let mut rows = Vec::new();
        for n in 0..=last {
            if steps.contains(&n) {
                rows.push((grid.time(n), estimate_stats(&ens, &model.space)));
            }
            if n < last {
                let un = if model.terms.control { u.values[n] } else { 0.0 };
                ens = particle_step(&ens, un, grid.dt(), &kernel, &model.space, &model.alpha, pc.noise)?;
            }
        }
        let p = out.join("stats.csv");
        io::write_stats_csv(&p, &rows)?;
        files.push(p);
        let p = out.join("particles.csv");
        io::write_snapshot_csv(&p, &ens)?;
        files.push(p);
    }
    let summary = json!({
        "reports": reports,
        "notes": reports.first().map(|r| r.notes.clone()).unwrap_or_default(),
    });
    Ok(Outcome { files, summary, status: "ok", code: 0 })
}

fn verify(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let vc = &cfg.verify;
    let mut results = check_identity_suite(&model, vc.identity_samples, cfg.seed)?;
    results.extend(check_inequality_suite(&model, vc.inequality_samples, cfg.seed.wrapping_add(1))?);
    let mut files = Vec::new();
    let p = out.join("checks.csv");
    io::write_checks_csv(&p, &results)?;
    files.push(p);
    let text = summarize(&results);
    print!("{text}");
    let p = out.join("verify_report.txt");
    fs::write(&p, &text)?;
    files.push(p);
    let mut constants = None;
    if vc.constants {
        let grid = cfg.grid()?;
        let copts = ConstantsOptions { batch_size: vc.batch_size, seed: cfg.seed, ..ConstantsOptions::default() };
        let table = estimate_constants(&model, &grid, &copts)?;
        let p = out.join("constants.json");
        write_json(&p, &table)?;
        files.push(p);
        constants = Some(table);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    let summary = json!({ "checks": results.len(), "failed": failed, "constants": constants });
    let (status, code) = if failed.is_empty() { ("ok", 0) } else { ("checks-failed", 1) };
    Ok(Outcome { files, summary, status, code })
}
