//! Model selection and evaluation over user-partitioned data.
//!
//! For one fraction of training users and one algorithm: sample `n_trials`
//! configurations, train each on the train users, score it on the validation
//! users, pick the best (lowest index on ties), retrain it `n_retrain` times
//! with fresh reservoir seeds and score those on the test users.
//!
//! Seeds: split `derive(seed, SPLIT, 0)`, configuration stream
//! `derive(seed, SAMPLE, 0)`, trial `i` reservoir `derive(seed, TRIAL, i)`,
//! retrain `r` reservoir `derive(seed, RETRAIN, r)`. Every fraction and
//! algorithm reuses them, so comparisons are paired.

mod report;
mod session;
mod space;

pub use session::SessionConfig;
pub use report::{read_report_json, sweep_table, write_reports, SweepTable};
pub use space::{sample_config, Interval, SearchSpace, TrialConfig};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, normalize_and_window, split_users, synth_har_raw, ClientDataset, SplitRequest, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::federation::{run_session, FederationConfig, Plan, TransportKind, WeightUnit};
use crate::plasticity::{IPConfig, RuleVariant};
use crate::readout::{argmax, ReadoutSolution};
use crate::reservoir::{init_reservoir, ReservoirConfig, ReservoirParams};
use crate::seed;

/// Environment variable capping the number of concurrently running trials.
pub const THREADS_ENV: &str = "FEDRES_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "IncFed")]
    IncFed,
    #[serde(rename = "FedIP+IncFed")]
    FedIpIncFed,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::IncFed => "IncFed",
            Algorithm::FedIpIncFed => "FedIP+IncFed",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "incfed" => Ok(Algorithm::IncFed),
            "fedip+incfed" | "fedip" => Ok(Algorithm::FedIpIncFed),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    Synth {
        #[serde(default)]
        synth: SynthConfig,
        window_len: usize,
    },
    /// Path relative to the experiment file unless absolute.
    Manifest { path: PathBuf },
}

/// Settings shared by every trial that the search does not vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub n_rounds: u32,
    pub batch_size: usize,
    pub rule_variant: RuleVariant,
    pub weight_unit: WeightUnit,
    pub washout: usize,
    pub density: f64,
    pub transport: TransportKind,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            n_rounds: 1,
            batch_size: 32,
            rule_variant: RuleVariant::Ungrouped,
            weight_unit: WeightUnit::Timesteps,
            washout: 0,
            density: 0.1,
            transport: TransportKind::InProcess,
        }
    }
}

/// An experiment manifest: everything needed to replay a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub split: SplitRequest,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub search: SearchSpace,
    #[serde(default = "default_retrain")]
    pub n_retrain: usize,
    #[serde(default)]
    pub training: TrainingSettings,
}

fn default_fractions() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::IncFed, Algorithm::FedIpIncFed]
}

fn default_retrain() -> usize {
    3
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). A relative manifest path
    /// is resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_structured(path)?;
        cfg.dataset.resolve_from(path);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.n_retrain == 0 {
            return Err(Error::InvalidConfig("n_retrain must be >= 1".into()));
        }
        if self.algorithms.is_empty() || self.fractions.is_empty() {
            return Err(Error::InvalidConfig("algorithms and fractions must be non-empty".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::InvalidConfig(format!("fraction {f} not in (0, 1]")));
        }
        if self.training.n_rounds == 0 || self.training.batch_size == 0 {
            return Err(Error::InvalidConfig("n_rounds and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// A small synthetic experiment that finishes in seconds.
    pub fn synthetic_default(seed_v: u64) -> Self {
        Self {
            seed: seed_v,
            dataset: DatasetSource::Synth { synth: SynthConfig { seed: seed_v, ..SynthConfig::default() }, window_len: 100 },
            split: SplitRequest::Counts { train: 3, val: 1, test: 1 },
            fractions: vec![1.0],
            algorithms: default_algorithms(),
            search: SearchSpace { units: vec![50, 100], n_trials: 6, ..SearchSpace::wesad() },
            n_retrain: 3,
            training: TrainingSettings::default(),
        }
    }
}

/// Loaded users keyed by id, plus the 100% split.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub users: BTreeMap<String, ClientDataset>,
    pub split: SplitSpec,
    pub n_classes: usize,
    pub n_inputs: usize,
}

impl DatasetSource {
    fn resolve_from(&mut self, config_path: &Path) {
        if let DatasetSource::Manifest { path } = self {
            if path.is_relative() {
                *path = config_path.parent().unwrap_or(Path::new(".")).join(&*path);
            }
        }
    }

    /// Normalized, windowed users keyed by id.
    pub fn load_users(&self) -> Result<BTreeMap<String, ClientDataset>> {
        let (raws, window_len) = match self {
            DatasetSource::Synth { synth, window_len } => (synth_har_raw(synth)?, *window_len),
            DatasetSource::Manifest { path } => {
                let (m, raws) = load_manifest(path)?;
                (raws, m.window_len)
            }
        };
        if raws.is_empty() {
            return Err(Error::Empty("dataset users"));
        }
        let mut users = BTreeMap::new();
        for raw in &raws {
            let (ds, _) = normalize_and_window(raw, window_len)?;
            if ds.sequences.is_empty() {
                return Err(Error::InvalidConfig(format!("user {} has no complete window", raw.user_id)));
            }
            users.insert(raw.user_id.clone(), ds);
        }
        Ok(users)
    }
}

/// TOML for `.toml` files, JSON otherwise.
pub(crate) fn read_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let users = cfg.dataset.load_users()?;
    let first = users.values().next().expect("non-empty");
    let (n_classes, n_inputs) = (first.n_classes, first.n_inputs().unwrap_or(0));
    let ids: Vec<String> = users.keys().cloned().collect();
    let split = split_users(&ids, &cfg.split, 1.0, seed::derive(cfg.seed, seed::STREAM_SPLIT, 0))?;
    Ok(ExperimentData { users, split, n_classes, n_inputs })
}

/// Users visible to model selection. Test users are deliberately absent.
pub struct SelectionData {
    pub train: Vec<ClientDataset>,
    pub val: Vec<ClientDataset>,
    pub n_classes: usize,
    pub n_inputs: usize,
}

fn pick(users: &BTreeMap<String, ClientDataset>, ids: &[String]) -> Result<Vec<ClientDataset>> {
    ids.iter()
        .map(|u| users.get(u).cloned().ok_or_else(|| Error::InvalidConfig(format!("unknown user {u}"))))
        .collect()
}

impl ExperimentData {
    pub fn selection(&self, split: &SplitSpec) -> Result<SelectionData> {
        Ok(SelectionData {
            train: pick(&self.users, &split.train_users)?,
            val: pick(&self.users, &split.val_users)?,
            n_classes: self.n_classes,
            n_inputs: self.n_inputs,
        })
    }

    pub fn test(&self, split: &SplitSpec) -> Result<Vec<ClientDataset>> {
        pick(&self.users, &split.test_users)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Carries the final gain/bias.
    pub reservoir: ReservoirParams,
    pub readout: ReadoutSolution,
}

pub fn reservoir_config(cfg: &TrialConfig, n_inputs: usize, settings: &TrainingSettings, seed_v: u64) -> ReservoirConfig {
    ReservoirConfig {
        n_units: cfg.units,
        n_inputs,
        spectral_radius: cfg.spectral_radius,
        input_scaling: cfg.input_scaling,
        leak_rate: cfg.leak_rate,
        density: settings.density,
        rec_bias_scale: 0.0,
        seed: seed_v,
    }
}

pub fn federation_config(cfg: &TrialConfig, n_clients: usize, settings: &TrainingSettings) -> FederationConfig {
    let ip = IPConfig {
        mu: cfg.mu,
        sigma: cfg.sigma,
        eta: cfg.eta,
        epochs: cfg.epochs,
        batch_size: settings.batch_size,
        rule_variant: settings.rule_variant,
        shuffle_seed: None,
    };
    FederationConfig {
        n_rounds: settings.n_rounds,
        clients: (0..n_clients as u32).collect(),
        ip,
        lambda: cfg.lambda,
        washout: settings.washout,
        transport: settings.transport.clone(),
        weight_unit: settings.weight_unit,
        record_frames: false,
    }
}

/// Builds a reservoir, optionally adapts it with FedIP, and fits the
/// federated readout on `train`.
pub fn train_model(
    cfg: &TrialConfig,
    algorithm: Algorithm,
    train: &[ClientDataset],
    n_classes: usize,
    n_inputs: usize,
    settings: &TrainingSettings,
    seed_v: u64,
) -> Result<TrainedModel> {
    let mut reservoir = init_reservoir(&reservoir_config(cfg, n_inputs, settings, seed_v))?;
    let fed = federation_config(cfg, train.len(), settings);
    let plan = Plan { fedip: algorithm == Algorithm::FedIpIncFed, readout: Some(n_classes) };
    let out = run_session(&fed, &reservoir, train, plan)?;
    reservoir.ip = out.state;
    Ok(TrainedModel { reservoir, readout: out.solution.expect("readout requested") })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Majority-vote accuracy over windows.
    pub window: f64,
    pub timestep: f64,
    pub n_windows: usize,
    pub n_timesteps: usize,
}

/// Most frequent value in `0..n`, lowest on ties.
pub fn majority(values: &[usize], n: usize) -> usize {
    let mut counts = vec![0usize; n.max(1)];
    for &v in values {
        counts[v] += 1;
    }
    argmax(counts.iter().map(|&c| c as f64))
}

pub fn evaluate(model: &TrainedModel, users: &[ClientDataset], washout: usize) -> Result<Accuracy> {
    let n_classes = model.readout.w_out.nrows();
    let (mut win_ok, mut n_win, mut step_ok, mut n_step) = (0usize, 0usize, 0usize, 0usize);
    for user in users {
        for s in &user.sequences {
            let traj = model.reservoir.run_sequence(&s.inputs, washout)?;
            let pred = model.readout.predict(&traj)?;
            let truth = &s.labels[washout..];
            step_ok += pred.labels.iter().zip(truth).filter(|(p, t)| p == t).count();
            n_step += truth.len();
            if majority(&pred.labels, n_classes) == majority(truth, n_classes) {
                win_ok += 1;
            }
            n_win += 1;
        }
    }
    if n_win == 0 {
        return Err(Error::Empty("evaluation users"));
    }
    Ok(Accuracy { window: win_ok as f64 / n_win as f64, timestep: step_ok as f64 / n_step as f64, n_windows: n_win, n_timesteps: n_step })
}

/// Accuracy of always answering the most frequent training window label.
pub fn majority_baseline(train: &[ClientDataset], test: &[ClientDataset], n_classes: usize) -> f64 {
    let window_labels = |users: &[ClientDataset]| -> Vec<usize> {
        users.iter().flat_map(|u| u.sequences.iter().map(|s| majority(&s.labels, n_classes))).collect()
    };
    let guess = majority(&window_labels(train), n_classes);
    let test_labels = window_labels(test);
    test_labels.iter().filter(|&&l| l == guess).count() as f64 / test_labels.len().max(1) as f64
}

/// Trains on the selection train users and returns validation accuracy.
pub fn run_trial(cfg: &TrialConfig, algorithm: Algorithm, data: &SelectionData, settings: &TrainingSettings, seed_v: u64) -> Result<Accuracy> {
    let model = train_model(cfg, algorithm, &data.train, data.n_classes, data.n_inputs, settings, seed_v)?;
    evaluate(&model, &data.val, settings.washout)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub config: TrialConfig,
    pub validation: Option<Accuracy>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRun {
    pub seed: u64,
    pub test: Accuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub algorithm: Algorithm,
    pub fraction_of_train: f64,
    pub train_users: Vec<String>,
    pub val_users: Vec<String>,
    pub test_users: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub selected: usize,
    pub selected_config: TrialConfig,
    pub runs: Vec<RetrainRun>,
    /// Mean of the runs' window accuracies.
    pub mean: f64,
    /// Population standard deviation of the runs' window accuracies.
    pub std: f64,
    pub majority_baseline: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Thread pool sized by [`THREADS_ENV`] when set, otherwise rayon's default.
pub fn trial_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn sample_trials(space: &SearchSpace, master: u64) -> Vec<(u64, TrialConfig)> {
    let mut rng = seed::rng(seed::derive(master, seed::STREAM_SAMPLE, 0));
    (0..space.n_trials).map(|i| (seed::derive(master, seed::STREAM_TRIAL, i as u64), sample_config(space, &mut rng))).collect()
}

/// Runs the trials concurrently; records keep trial order.
pub fn run_trials(
    pool: &rayon::ThreadPool,
    trials: &[(u64, TrialConfig)],
    algorithm: Algorithm,
    data: &SelectionData,
    settings: &TrainingSettings,
) -> Vec<TrialRecord> {
    pool.install(|| {
        trials
            .par_iter()
            .enumerate()
            .map(|(index, (seed_v, config))| {
                let r = run_trial(config, algorithm, data, settings, *seed_v);
                TrialRecord { index, seed: *seed_v, config: config.clone(), validation: r.as_ref().ok().copied(), error: r.err().map(|e| e.to_string()) }
            })
            .collect()
    })
}

/// Highest validation window accuracy; the lowest index wins ties.
pub fn select_best(trials: &[TrialRecord]) -> Result<&TrialRecord> {
    let mut best: Option<&TrialRecord> = None;
    for t in trials {
        if let Some(v) = t.validation {
            if best.is_none_or(|b| v.window > b.validation.unwrap().window) {
                best = Some(t);
            }
        }
    }
    best.ok_or(Error::AllTrialsFailed(trials.len()))
}

#[allow(clippy::too_many_arguments)]
pub fn select_and_retrain(
    pool: &rayon::ThreadPool,
    trials: Vec<TrialRecord>,
    n_retrain: usize,
    algorithm: Algorithm,
    data: &ExperimentData,
    split: &SplitSpec,
    settings: &TrainingSettings,
    master: u64,
) -> Result<ExperimentReport> {
    if n_retrain == 0 {
        return Err(Error::InvalidConfig("n_retrain must be >= 1".into()));
    }
    let best = select_best(&trials)?;
    let (selected, selected_config) = (best.index, best.config.clone());
    let train = pick(&data.users, &split.train_users)?;
    let test = data.test(split)?;
    let runs = pool.install(|| {
        (0..n_retrain)
            .into_par_iter()
            .map(|r| {
                let seed_v = seed::derive(master, seed::STREAM_RETRAIN, r as u64);
                let model = train_model(&selected_config, algorithm, &train, data.n_classes, data.n_inputs, settings, seed_v)?;
                Ok(RetrainRun { seed: seed_v, test: evaluate(&model, &test, settings.washout)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (mean, std) = mean_std(&runs.iter().map(|r| r.test.window).collect::<Vec<_>>());
    Ok(ExperimentReport {
        algorithm,
        fraction_of_train: split.fraction_of_train,
        train_users: split.train_users.clone(),
        val_users: split.val_users.clone(),
        test_users: split.test_users.clone(),
        trials,
        selected,
        selected_config,
        runs,
        mean,
        std,
        majority_baseline: majority_baseline(&train, &test, data.n_classes),
    })
}

/// Search plus retraining for one fraction and one algorithm.
pub fn run_search(pool: &rayon::ThreadPool, cfg: &ExperimentConfig, data: &ExperimentData, fraction: f64, algorithm: Algorithm) -> Result<ExperimentReport> {
    let split = data.split.with_fraction(fraction)?;
    let selection = data.selection(&split)?;
    let trials = run_trials(pool, &sample_trials(&cfg.search, cfg.seed), algorithm, &selection, &cfg.training);
    select_and_retrain(pool, trials, cfg.n_retrain, algorithm, data, &split, &cfg.training, cfg.seed)
}

/// One report per (fraction, algorithm), fractions outermost.
pub fn sweep_fraction(pool: &rayon::ThreadPool, cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::with_capacity(cfg.fractions.len() * cfg.algorithms.len());
    for &f in &cfg.fractions {
        for &a in &cfg.algorithms {
            out.push(run_search(pool, cfg, data, f, a)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(index: usize, acc: Option<f64>) -> TrialRecord {
        TrialRecord {
            index,
            seed: 0,
            config: sample_trials(&SearchSpace::wesad(), 0)[0].1.clone(),
            validation: acc.map(|w| Accuracy { window: w, ..Accuracy::default() }),
            error: acc.is_none().then(|| "failed".into()),
        }
    }

    #[test]
    fn selection_prefers_lowest_index_on_ties() {
        let t = vec![record(0, Some(0.5)), record(1, None), record(2, Some(0.8)), record(3, Some(0.8))];
        assert_eq!(select_best(&t).unwrap().index, 2);
        assert_eq!(select_best(&t[..1]).unwrap().index, 0);
        assert!(matches!(select_best(&[record(0, None)]), Err(Error::AllTrialsFailed(1))));
    }

    #[test]
    fn mean_and_population_std() {
        let (m, s) = mean_std(&[0.5]);
        assert_eq!((m, s), (0.5, 0.0));
        let (m, s) = mean_std(&[0.6, 0.8]);
        assert!((m - 0.7).abs() < 1e-15 && (s - 0.1).abs() < 1e-15);
    }

    #[test]
    fn majority_ties_go_low() {
        assert_eq!(majority(&[2, 1, 2, 1], 3), 1);
        assert_eq!(majority(&[], 3), 0);
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in [Algorithm::IncFed, Algorithm::FedIpIncFed] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.name()));
        }
    }

    #[test]
    fn experiment_config_toml_roundtrip() {
        let cfg = ExperimentConfig::synthetic_default(3);
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
