//! CSV ingestion and the dataset manifest.
//!
//! One file per user, `<user_id>.csv`, UTF-8 with header `f1,...,fN,label`.
//! The manifest is a JSON document next to the CSV files.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub n_features: usize,
    pub n_classes: usize,
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        (1..=self.n_features).map(|i| format!("f{i}")).chain(std::iter::once("label".to_string())).collect()
    }
}

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv { path: path.to_path_buf(), line, message: message.into() }
}

pub fn load_user_csv(path: &Path, schema: &CsvSchema) -> Result<RawSeries> {
    let user_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| csv_err(path, 0, "file name is not a valid user id"))?
        .to_string();
    let mut rdr = ::csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(|e| csv_err(path, 0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| csv_err(path, 1, e.to_string()))?.clone();
    let want = schema.header();
    if header.iter().map(str::trim).ne(want.iter().map(String::as_str)) {
        return Err(csv_err(path, 1, format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), want)));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != schema.n_features + 1 {
            return Err(csv_err(path, line, format!("expected {} fields, found {}", schema.n_features + 1, rec.len())));
        }
        for (j, field) in rec.iter().take(schema.n_features).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| csv_err(path, line, format!("feature f{} is not numeric: {field:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(csv_err(path, line, format!("feature f{} is not finite", j + 1)));
            }
            values.push(v);
        }
        let field = rec.get(schema.n_features).unwrap().trim();
        let label: usize = field.parse().map_err(|_| csv_err(path, line, format!("label is not a class id: {field:?}")))?;
        if label >= schema.n_classes {
            return Err(csv_err(path, line, format!("label {label} outside 0..{}", schema.n_classes)));
        }
        labels.push(label);
    }
    Ok(RawSeries {
        user_id,
        features: DMatrix::from_row_slice(labels.len(), schema.n_features, &values),
        labels,
        n_classes: schema.n_classes,
    })
}

/// Writes `raw` as `<dir>/<user_id>.csv`. Floats use the shortest
/// round-tripping representation.
pub fn write_user_csv(dir: &Path, raw: &RawSeries) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", raw.user_id));
    let schema = CsvSchema { n_features: raw.features.ncols(), n_classes: raw.n_classes };
    let mut w = ::csv::Writer::from_path(&path).map_err(|e| csv_err(&path, 0, e.to_string()))?;
    let io = |e: ::csv::Error| csv_err(&path, 0, e.to_string());
    w.write_record(schema.header()).map_err(io)?;
    let mut rec = Vec::with_capacity(schema.n_features + 1);
    for t in 0..raw.len() {
        rec.clear();
        rec.extend(raw.features.row(t).iter().map(|v| v.to_string()));
        rec.push(raw.labels[t].to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub users: Vec<String>,
    pub n_features: usize,
    pub n_classes: usize,
    pub window_len: usize,
}

impl DatasetManifest {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema { n_features: self.n_features, n_classes: self.n_classes }
    }
}

/// Reads the manifest and every listed user file from the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, Vec<RawSeries>)> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let raws = manifest
        .users
        .iter()
        .map(|u| load_user_csv(&dir.join(format!("{u}.csv")), &manifest.schema()))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, raws))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_har_raw, SynthConfig};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const SCHEMA: CsvSchema = CsvSchema { n_features: 2, n_classes: 3 };

    #[test]
    fn three_rows_two_features() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "alice.csv", "f1,f2,label\n0.5,1,0\n-2,3.25,2\n1e-3,0,1\n");
        let raw = load_user_csv(&p, &SCHEMA).unwrap();
        assert_eq!(raw.user_id, "alice");
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.features.ncols(), 2);
        assert_eq!(raw.features[(1, 1)], 3.25);
        assert_eq!(raw.labels, vec![0, 2, 1]);
    }

    fn error_line(body: &str) -> (u64, String) {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "u.csv", body);
        match load_user_csv(&p, &SCHEMA).unwrap_err() {
            Error::Csv { line, message, .. } => (line, message),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn label_outside_schema_names_line() {
        let (line, msg) = error_line("f1,f2,label\n0,0,0\n1,1,7\n");
        assert_eq!(line, 3);
        assert!(msg.contains("label 7"));
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        assert_eq!(error_line("f1,f2,label\n0,0,0\n0,0\n").0, 3);
        assert_eq!(error_line("f1,f2,label\n0,x,0\n").0, 2);
        assert_eq!(error_line("f1,f2,label\n0,1,-1\n").0, 2);
        assert_eq!(error_line("a,b,label\n0,1,1\n").0, 1);
    }

    #[test]
    fn synthetic_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_users: 2, steps_per_user: 300, ..SynthConfig::default() };
        let raws = synth_har_raw(&cfg).unwrap();
        let manifest = DatasetManifest {
            users: raws.iter().map(|r| r.user_id.clone()).collect(),
            n_features: cfg.n_features,
            n_classes: cfg.n_classes,
            window_len: 100,
        };
        for r in &raws {
            write_user_csv(dir.path(), r).unwrap();
        }
        let mpath = dir.path().join("manifest.json");
        write_manifest(&mpath, &manifest).unwrap();
        let (m, back) = load_manifest(&mpath).unwrap();
        assert_eq!(m, manifest);
        for (a, b) in raws.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            assert!((&a.features - &b.features).amax() <= 1e-12);
        }
    }
}
