//! Report files and the accuracy-versus-fraction table.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use super::{Algorithm, ExperimentReport};
use crate::error::{Error, Result};

/// Writes `reports.json` (everything) and `summary.csv` (one row per
/// report) into `dir`, creating it if needed.
pub fn write_reports(dir: &Path, reports: &[ExperimentReport]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("reports.json");
    std::fs::write(&json, serde_json::to_string_pretty(reports)?)?;
    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    w.write_record(["algorithm", "fraction", "n_train_users", "selected_trial", "mean", "std", "majority_baseline", "runs"])
        .map_err(|e| csv_error(&csv_path, e))?;
    for r in reports {
        let runs: Vec<String> = r.runs.iter().map(|x| format!("{:.6}", x.test.window)).collect();
        w.write_record([
            r.algorithm.name().to_string(),
            r.fraction_of_train.to_string(),
            r.train_users.len().to_string(),
            r.selected.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
            format!("{:.6}", r.majority_baseline),
            runs.join(";"),
        ])
        .map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush()?;
    Ok((json, csv_path))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv { path: path.to_path_buf(), line, message: e.to_string() }
}

pub fn read_report_json(path: &Path) -> Result<Vec<ExperimentReport>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Mean and std test accuracy per fraction (rows) and algorithm (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub fractions: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub cells: BTreeMap<(usize, Algorithm), (f64, f64)>,
}

pub fn sweep_table(reports: &[ExperimentReport]) -> SweepTable {
    let mut fractions: Vec<f64> = Vec::new();
    let mut algorithms: Vec<Algorithm> = Vec::new();
    let mut cells = BTreeMap::new();
    for r in reports {
        let fi = match fractions.iter().position(|f| *f == r.fraction_of_train) {
            Some(i) => i,
            None => {
                fractions.push(r.fraction_of_train);
                fractions.len() - 1
            }
        };
        if !algorithms.contains(&r.algorithm) {
            algorithms.push(r.algorithm);
        }
        cells.insert((fi, r.algorithm), (r.mean, r.std));
    }
    SweepTable { fractions, algorithms, cells }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>10}", "fraction")?;
        for a in &self.algorithms {
            write!(f, " {:>18}", a.name())?;
        }
        writeln!(f)?;
        for (i, frac) in self.fractions.iter().enumerate() {
            write!(f, "{:>9.0}%", frac * 100.0)?;
            for a in &self.algorithms {
                match self.cells.get(&(i, *a)) {
                    Some((m, s)) => write!(f, " {:>10.2} ± {:<5.2}", m * 100.0, s * 100.0)?,
                    None => write!(f, " {:>18}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
