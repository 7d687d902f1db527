//! Column-wise diffs between the CSV artifacts of two or three runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::run::{Manifest, MANIFEST};
use crate::CliError;

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(kfp_core::KfpError::from)?;
        let headers = r.headers().map_err(kfp_core::KfpError::from)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(kfp_core::KfpError::from)?;
            rows.push(rec.iter().map(|s| s.trim().parse::<f64>().ok()).collect());
        }
        Ok(Self { headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn time_col(&self) -> Option<usize> {
        self.col("t").or_else(|| self.col("t_cell"))
    }

    /// Row index keyed by time (and by `m`/`cell` when present).
    fn keys(&self) -> Vec<Vec<i64>> {
        let cols: Vec<usize> = ["m", "cell", "iter"].iter().filter_map(|c| self.col(c)).chain(self.time_col()).collect();
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if cols.is_empty() {
                    vec![i as i64]
                } else {
                    cols.iter().map(|&c| (r[c].unwrap_or(f64::NAN) * 1e9).round() as i64).collect()
                }
            })
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct ColumnDiff {
    pub column: String,
    pub rows: usize,
    pub max_abs_diff_ab: f64,
    pub max_abs_diff_bc: Option<f64>,
    /// `log2(|A - B| / |B - C|)` for runs refined by factors of two.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct FileDiff {
    pub file: String,
    pub columns: Vec<ColumnDiff>,
    /// Mean-field rows whose discrepancies agree within 3 combined standard errors.
    pub within_3se: Option<bool>,
}

fn manifest(dir: &Path) -> Result<Manifest, CliError> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

fn diff_file(name: &str, tables: &[Table]) -> FileDiff {
    let index: Vec<BTreeMap<Vec<i64>, usize>> =
        tables.iter().map(|t| t.keys().into_iter().enumerate().map(|(i, k)| (k, i)).collect()).collect();
    // rows of the first table present in every table
    let common: Vec<Vec<usize>> = tables[0]
        .keys()
        .into_iter()
        .filter_map(|k| index.iter().map(|ix| ix.get(&k).copied()).collect::<Option<Vec<_>>>())
        .collect();
    let mut columns = Vec::new();
    for (c, h) in tables[0].headers.iter().enumerate() {
        if Some(c) == tables[0].time_col() || ["m", "cell", "iter", "step", "id"].contains(&h.as_str()) {
            continue;
        }
        let Some(cols) = tables.iter().map(|t| t.col(h)).collect::<Option<Vec<_>>>() else { continue };
        let gap = |a: usize, b: usize| -> Option<f64> {
            let mut worst = 0.0f64;
            for r in &common {
                let x = tables[a].rows[r[a]][cols[a]]?;
                let y = tables[b].rows[r[b]][cols[b]]?;
                worst = worst.max((x - y).abs());
            }
            Some(worst)
        };
        let Some(ab) = gap(0, 1) else { continue };
        let bc = if tables.len() == 3 { gap(1, 2) } else { None };
        let observed_order = bc.filter(|&e| e > 0.0 && ab > 0.0).map(|e| (ab / e).log2());
        columns.push(ColumnDiff { column: h.clone(), rows: common.len(), max_abs_diff_ab: ab, max_abs_diff_bc: bc, observed_order });
    }
    let within_3se = (name == "meanfield.csv").then(|| {
        let (a, b) = (&tables[0], &tables[1]);
        let get = |t: &Table, row: usize, col: &str| t.col(col).and_then(|c| t.rows[row][c]).unwrap_or(f64::NAN);
        common.iter().all(|r| {
            ["density", "momentum"].iter().all(|q| {
                let d = (get(a, r[0], &format!("{q}_discrepancy")) - get(b, r[1], &format!("{q}_discrepancy"))).abs();
                let se = get(a, r[0], &format!("{q}_se")).hypot(get(b, r[1], &format!("{q}_se")));
                d <= 3.0 * se
            })
        })
    });
    FileDiff { file: name.to_string(), columns, within_3se }
}

pub fn compare(a: &Path, b: &Path, c: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let dirs: Vec<&Path> = [Some(a), Some(b), c].into_iter().flatten().collect();
    let manifests = dirs.iter().map(|d| manifest(d)).collect::<Result<Vec<_>, _>>()?;
    let domain0 = &manifests[0].config["domain"];
    for (m, d) in manifests.iter().zip(&dirs).skip(1) {
        if &m.config["domain"] != domain0 {
            return Err(CliError::Validation(format!(
                "incompatible domains: {} has {} but {} has {}",
                dirs[0].display(),
                domain0,
                d.display(),
                m.config["domain"]
            )));
        }
        if m.mode != manifests[0].mode {
            return Err(CliError::Validation(format!("mode mismatch: {} vs {}", manifests[0].mode, m.mode)));
        }
    }
    let mut files = Vec::new();
    for art in manifests[0].artifacts.iter().filter(|f| f.file.ends_with(".csv")) {
        if !manifests.iter().all(|m| m.artifacts.iter().any(|x| x.file == art.file)) {
            continue;
        }
        let tables = dirs.iter().map(|d| Table::read(&d.join(&art.file))).collect::<Result<Vec<_>, _>>()?;
        files.push(diff_file(&art.file, &tables));
    }
    for f in &files {
        println!("{}", f.file);
        for col in &f.columns {
            let mut line = format!("  {:<22} rows {:<6} |A-B| {:.3e}", col.column, col.rows, col.max_abs_diff_ab);
            if let Some(bc) = col.max_abs_diff_bc {
                line += &format!("  |B-C| {bc:.3e}");
            }
            if let Some(p) = col.observed_order {
                line += &format!("  ratio {:.3} order {p:.3}", 2f64.powf(p));
            }
            println!("{line}");
        }
        if let Some(ok) = f.within_3se {
            println!("  within 3 standard errors: {ok}");
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        let text = serde_json::to_string_pretty(&files).map_err(anyhow::Error::from)?;
        fs::write(o.join("compare.json"), text + "\n")?;
    }
    Ok(())
}
