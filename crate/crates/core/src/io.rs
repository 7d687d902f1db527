//! CSV exports and the binary coefficient dump.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.
//!
//! Coefficient dump layout (little endian):
//!
//! ```text
//! magic  b"KFPC"
//! u32    version (1)
//! u32    d, u32 Nx, u32 Kv
//! f64    L, f64 T
//! u64    Nt
//! (Nt + 1) states, each n_hermite * n_fourier pairs (f64 re, f64 im)
//!        in the in-memory order coeffs[kf * n_fourier + jf]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::control::{ControlSignal, DescentLogEntry};
use crate::domain::DomainSpec;
use crate::error::{KfpError, Result};
use crate::evolution::{TimeGrid, Trajectory};
use crate::field::SpectralField;
use crate::particles::{EnsembleStats, MeanFieldReport, ParticleEnsemble};
use crate::scalar::{Complex, Real};
use crate::verify::CheckResult;

pub const DUMP_MAGIC: &[u8; 4] = b"KFPC";
pub const DUMP_VERSION: u32 = 1;

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn num<T: Real>(x: T) -> String {
    format!("{}", x.as_f64())
}

/// Columns `t, normY, normVv, mass_mode_re`.
pub fn write_trajectory_csv<T: Real>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "normY", "normVv", "mass_mode_re"])?;
    for (n, s) in traj.states.iter().enumerate() {
        w.write_record([num(traj.grid.time(n)), num(traj.norm_y[n]), num(traj.norm_vv[n]), num(s.mass_mode().re)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `iter, cost, tracking, penalty, step_size, stationarity`.
pub fn write_descent_log_csv<T: Real>(path: &Path, log: &[DescentLogEntry<T>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iter", "cost", "tracking", "penalty", "step_size", "stationarity"])?;
    for e in log {
        w.write_record([
            e.iter.to_string(),
            num(e.cost),
            num(e.tracking),
            num(e.penalty),
            num(e.step_size),
            num(e.stationarity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t_cell, u`; `t_cell` is the left end of each control cell.
pub fn write_control_csv<T: Real>(path: &Path, u: &ControlSignal<T>, grid: &TimeGrid<T>) -> Result<()> {
    u.check_grid(grid)?;
    let mut w = writer(path)?;
    w.write_record(["t_cell", "u"])?;
    for (n, v) in u.values.iter().enumerate() {
        w.write_record([num(grid.time(n)), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t_cell, u` file back into plain values.
pub fn read_control_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = r.headers()?.clone();
    let col = headers.iter().position(|h| h == "u").ok_or_else(|| KfpError::InvalidParameter {
        name: "control file",
        reason: format!("{} has no `u` column", path.display()),
    })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[col].trim().parse().map_err(|e| KfpError::InvalidParameter {
            name: "control file",
            reason: format!("bad value `{}`: {e}", &rec[col]),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Columns `id, x1[, x2], v1[, v2]`.
pub fn write_snapshot_csv(path: &Path, ens: &ParticleEnsemble) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string()];
    head.extend((1..=ens.dim).map(|i| format!("x{i}")));
    head.extend((1..=ens.dim).map(|i| format!("v{i}")));
    w.write_record(&head)?;
    for (p, (x, v)) in ens.x.iter().zip(&ens.v).enumerate() {
        let mut rec = vec![p.to_string()];
        rec.extend(x[..ens.dim].iter().map(|c| c.to_string()));
        rec.extend(v[..ens.dim].iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (time, cell): `t, cell, count, density, momentum_1[, momentum_2]`.
pub fn write_stats_csv(path: &Path, rows: &[(f64, EnsembleStats)]) -> Result<()> {
    let mut w = writer(path)?;
    let dim = rows.first().map_or(1, |r| r.1.momentum.len());
    let mut head = vec!["t".to_string(), "cell".into(), "count".into(), "density".into()];
    head.extend((1..=dim).map(|i| format!("momentum_{i}")));
    w.write_record(&head)?;
    for (t, s) in rows {
        for c in 0..s.counts.len() {
            let mut rec = vec![t.to_string(), c.to_string(), s.counts[c].to_string(), s.density[c].to_string()];
            rec.extend(s.momentum.iter().map(|m| m[c].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_meanfield_csv(path: &Path, reports: &[MeanFieldReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "m",
        "replicates",
        "step",
        "t",
        "density_discrepancy",
        "density_se",
        "momentum_discrepancy",
        "momentum_se",
        "within_3se",
    ])?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.m.to_string(),
                r.replicates.to_string(),
                row.step.to_string(),
                row.time.to_string(),
                row.density_discrepancy.to_string(),
                row.density_se.to_string(),
                row.momentum_discrepancy.to_string(),
                row.momentum_se.to_string(),
                row.within_3se.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_checks_csv(path: &Path, results: &[CheckResult]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["name", "kind", "samples", "worst", "mean", "tolerance", "pass"])?;
    for r in results {
        let kind = match r.kind {
            crate::verify::CheckKind::Identity => "identity",
            crate::verify::CheckKind::Inequality => "inequality",
        };
        w.write_record([
            r.name.clone(),
            kind.to_string(),
            r.samples.to_string(),
            r.worst.to_string(),
            r.mean.to_string(),
            r.tolerance.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coeff_dump<T: Real>(path: &Path, traj: &Trajectory<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = traj.states[0].domain;
    w.write_all(DUMP_MAGIC)?;
    w.write_u32::<LittleEndian>(DUMP_VERSION)?;
    w.write_u32::<LittleEndian>(d.dim as u32)?;
    w.write_u32::<LittleEndian>(d.nx as u32)?;
    w.write_u32::<LittleEndian>(d.kv as u32)?;
    w.write_f64::<LittleEndian>(d.half_width.as_f64())?;
    w.write_f64::<LittleEndian>(traj.grid.horizon.as_f64())?;
    w.write_u64::<LittleEndian>(traj.grid.steps as u64)?;
    for s in &traj.states {
        for c in &s.coeffs {
            w.write_f64::<LittleEndian>(c.re.as_f64())?;
            w.write_f64::<LittleEndian>(c.im.as_f64())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_coeff_dump(path: &Path) -> Result<Trajectory<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |m: String| KfpError::BadDump(m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("header: {e}")))?;
    if &magic != DUMP_MAGIC {
        return Err(bad(format!("magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DUMP_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let nx = r.read_u32::<LittleEndian>()? as usize;
    let kv = r.read_u32::<LittleEndian>()? as usize;
    let half = r.read_f64::<LittleEndian>()?;
    let horizon = r.read_f64::<LittleEndian>()?;
    let steps = r.read_u64::<LittleEndian>()? as usize;
    let domain = DomainSpec::new(dim, half, nx, kv).map_err(|e| bad(e.to_string()))?;
    let grid = TimeGrid::new(horizon, steps).map_err(|e| bad(e.to_string()))?;
    let mut states = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let mut f = SpectralField::zeros(domain);
        for c in f.coeffs.iter_mut() {
            let re = r.read_f64::<LittleEndian>().map_err(|e| bad(format!("state {n}: {e}")))?;
            let im = r.read_f64::<LittleEndian>().map_err(|e| bad(format!("state {n}: {e}")))?;
            *c = Complex::new(re, im);
        }
        states.push(f);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    Trajectory::from_states(grid, states)
}
