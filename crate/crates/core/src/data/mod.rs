//! Per-user time series: ingestion, normalisation, windowing, user splits
//! and a synthetic activity-recognition generator.

mod files;
mod synth;

pub use self::files::{load_manifest, load_user_csv, write_manifest, write_user_csv, CsvSchema, DatasetManifest};
pub use self::synth::{synth_har, synth_har_raw, Regime, SynthConfig};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One user's raw recording: `T x n_features` plus a label per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub user_id: String,
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// A fixed-length window with per-timestep labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    /// `L x n_inputs`, one row per timestep.
    pub inputs: DMatrix<f64>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub user_id: String,
    pub sequences: Vec<Sequence>,
    pub n_classes: usize,
}

impl ClientDataset {
    pub fn n_timesteps(&self) -> usize {
        self.sequences.iter().map(|s| s.labels.len()).sum()
    }

    pub fn n_inputs(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.inputs.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.sequences.first() else {
            return Ok(());
        };
        let (l, m) = (first.inputs.nrows(), first.inputs.ncols());
        for s in &self.sequences {
            if s.inputs.nrows() != l || s.labels.len() != l {
                return Err(Error::Dimension { context: "sequence length", expected: l, actual: s.inputs.nrows() });
            }
            if s.inputs.ncols() != m {
                return Err(Error::Dimension { context: "sequence features", expected: m, actual: s.inputs.ncols() });
            }
            if let Some(&bad) = s.labels.iter().find(|&&c| c >= self.n_classes) {
                return Err(Error::InvalidConfig(format!("label {bad} outside 0..{}", self.n_classes)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowReport {
    pub n_windows: usize,
    pub dropped: usize,
    /// Features with zero variance, mapped to all-zeros.
    pub constant_features: Vec<usize>,
}

/// Z-scores each column with its own mean and population std. Constant
/// columns become zero and are reported.
pub fn zscore(features: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let t = features.nrows() as f64;
    let mut out = features.clone();
    let mut constant = Vec::new();
    for j in 0..features.ncols() {
        let col = features.column(j);
        let mean = col.sum() / t;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        let std = var.sqrt();
        // rounding leaves a constant column with a tiny nonzero spread
        if std > 1e-12 * mean.abs().max(1.0) && std.is_finite() {
            out.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean) / std);
        } else {
            out.column_mut(j).fill(0.0);
            constant.push(j);
        }
    }
    (out, constant)
}

/// Per-user z-score, then non-overlapping windows of `window_len`; a trailing
/// remainder shorter than a window is dropped.
pub fn normalize_and_window(raw: &RawSeries, window_len: usize) -> Result<(ClientDataset, WindowReport)> {
    if window_len == 0 {
        return Err(Error::InvalidConfig("window_len must be >= 1".into()));
    }
    if raw.labels.len() != raw.len() {
        return Err(Error::Dimension { context: "raw labels", expected: raw.len(), actual: raw.labels.len() });
    }
    let (norm, constant_features) = if raw.is_empty() { (raw.features.clone(), vec![]) } else { zscore(&raw.features) };
    let n_windows = raw.len() / window_len;
    let sequences = (0..n_windows)
        .map(|w| {
            let start = w * window_len;
            Sequence {
                inputs: norm.rows(start, window_len).into_owned(),
                labels: raw.labels[start..start + window_len].to_vec(),
            }
        })
        .collect();
    let ds = ClientDataset { user_id: raw.user_id.clone(), sequences, n_classes: raw.n_classes };
    Ok((ds, WindowReport { n_windows, dropped: raw.len() - n_windows * window_len, constant_features }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_users: Vec<String>,
    pub val_users: Vec<String>,
    pub test_users: Vec<String>,
    pub fraction_of_train: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRequest {
    Counts { train: usize, val: usize, test: usize },
    /// Val and test counts are `round(ratio * n)`; train takes the rest.
    Ratios { train: f64, val: f64, test: f64 },
    Explicit { train: Vec<String>, val: Vec<String>, test: Vec<String> },
}

/// Number of train users kept for a fraction: `ceil(fraction * count)`,
/// computed with a 1e-9 slack so that products like `0.7 * 10` do not round
/// up, and never below one.
pub fn fraction_count(fraction: f64, count: usize) -> usize {
    if count == 0 {
        return 0;
    }
    ((fraction * count as f64 - 1e-9).ceil() as usize).clamp(1, count)
}

/// Assigns users to train/val/test.
///
/// User ids are sorted, shuffled with `seed`, then cut in train/val/test
/// order. The train list keeps its shuffled order, and a fraction keeps its
/// prefix, so smaller fractions are subsets of larger ones.
pub fn split_users(users: &[String], request: &SplitRequest, fraction_of_train: f64, seed_v: u64) -> Result<SplitSpec> {
    if !(fraction_of_train > 0.0 && fraction_of_train <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction_of_train {fraction_of_train} not in (0, 1]")));
    }
    let mut sorted: Vec<String> = users.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != users.len() {
        return Err(Error::InvalidConfig("duplicate user ids".into()));
    }
    let n = sorted.len();
    let (mut train, val, test) = match request {
        SplitRequest::Explicit { train, val, test } => {
            let mut all: Vec<&String> = train.iter().chain(val).chain(test).collect();
            let total = all.len();
            all.sort();
            all.dedup();
            if all.len() != total {
                return Err(Error::InvalidConfig("split lists overlap".into()));
            }
            if let Some(u) = all.iter().find(|u| sorted.binary_search(u).is_err()) {
                return Err(Error::InvalidConfig(format!("unknown user {u}")));
            }
            (train.clone(), val.clone(), test.clone())
        }
        _ => {
            let (tr, va, te) = match *request {
                SplitRequest::Counts { train, val, test } => (train, val, test),
                SplitRequest::Ratios { train, val, test } => {
                    if [train, val, test].iter().any(|r| r.is_nan() || *r < 0.0) {
                        return Err(Error::InvalidConfig("split ratios must be non-negative".into()));
                    }
                    let sum = train + val + test;
                    let va = (val / sum * n as f64).round() as usize;
                    let te = (test / sum * n as f64).round() as usize;
                    (n.saturating_sub(va + te), va, te)
                }
                SplitRequest::Explicit { .. } => unreachable!(),
            };
            if tr + va + te > n {
                return Err(Error::InvalidConfig(format!("split {tr}-{va}-{te} needs more than the {n} available users")));
            }
            let mut shuffled = sorted.clone();
            shuffled.shuffle(&mut seed::rng(seed_v));
            let train = shuffled[..tr].to_vec();
            let val = shuffled[tr..tr + va].to_vec();
            let test = shuffled[tr + va..tr + va + te].to_vec();
            (train, val, test)
        }
    };
    if train.is_empty() {
        return Err(Error::InvalidConfig("split has no training users".into()));
    }
    train.truncate(fraction_count(fraction_of_train, train.len()));
    Ok(SplitSpec { train_users: train, val_users: val, test_users: test, fraction_of_train })
}

impl SplitSpec {
    /// Same split with the train list cut to `fraction` of the current one.
    pub fn with_fraction(&self, fraction: f64) -> Result<SplitSpec> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("fraction {fraction} not in (0, 1]")));
        }
        let mut s = self.clone();
        s.train_users.truncate(fraction_count(fraction, self.train_users.len()));
        s.fraction_of_train = fraction * self.fraction_of_train;
        Ok(s)
    }
}
