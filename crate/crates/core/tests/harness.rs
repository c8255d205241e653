use fedres_core::data::SplitRequest;
use fedres_core::harness::{
    load_data, read_report_json, run_search, sample_trials, sweep_fraction, sweep_table, write_reports, Algorithm, DatasetSource, ExperimentConfig, SearchSpace,
};

fn quick(seed_v: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic_default(seed_v);
    if let DatasetSource::Synth { synth, .. } = &mut cfg.dataset {
        synth.n_users = 6;
        synth.steps_per_user = 1200;
    }
    cfg.split = SplitRequest::Counts { train: 4, val: 1, test: 1 };
    cfg.search = SearchSpace { units: vec![30], n_trials: 3, epochs: vec![2], ..SearchSpace::wesad() };
    cfg.n_retrain = 2;
    cfg.fractions = vec![0.5, 1.0];
    cfg
}

#[test]
fn trials_are_shared_across_algorithms_and_fractions() {
    let cfg = quick(1);
    let data = load_data(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let reports = sweep_fraction(&pool, &cfg, &data).unwrap();
    assert_eq!(reports.len(), 4);
    let sampled = sample_trials(&cfg.search, cfg.seed);
    for r in &reports {
        assert_eq!(r.trials.len(), 3);
        for (t, (seed_v, c)) in r.trials.iter().zip(&sampled) {
            assert_eq!((t.seed, &t.config), (*seed_v, c));
        }
        assert_eq!(r.runs.len(), 2);
        assert!(r.runs.iter().all(|x| (0.0..=1.0).contains(&x.test.window)));
        assert_eq!(r.selected_config, r.trials[r.selected].config);
    }
    assert_eq!(reports[0].train_users.len(), 2);
    assert_eq!(reports[2].train_users.len(), 4);
    assert!(reports[2].train_users.starts_with(&reports[0].train_users));
    assert_eq!(reports[0].algorithm, Algorithm::IncFed);
    assert_eq!(reports[1].algorithm, Algorithm::FedIpIncFed);
}

#[test]
fn reports_roundtrip_through_files() {
    let cfg = quick(2);
    let data = load_data(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let report = run_search(&pool, &cfg, &data, 1.0, Algorithm::FedIpIncFed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = write_reports(dir.path(), std::slice::from_ref(&report)).unwrap();
    assert_eq!(read_report_json(&json).unwrap(), vec![report.clone()]);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("FedIP+IncFed,1,"));
    let table = sweep_table(&[report]).to_string();
    assert!(table.contains("100%") && table.contains("FedIP+IncFed"), "{table}");
}

#[test]
fn config_files_load_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(3);
    let toml_path = dir.path().join("exp.toml");
    std::fs::write(&toml_path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&toml_path).unwrap(), cfg);
    let json_path = dir.path().join("exp.json");
    std::fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&json_path).unwrap(), cfg);
    let mut bad = cfg.clone();
    bad.fractions = vec![1.5];
    std::fs::write(&json_path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(ExperimentConfig::load(&json_path).is_err());
}

#[test]
fn minimal_toml_uses_defaults() {
    let text = r#"
seed = 5

[dataset]
kind = "synth"
window_len = 100

[split]
counts = { train = 3, val = 1, test = 1 }

[search]
units = [50]
spectral_radius = { lo = 0.3, hi = 0.99 }
input_scaling = { lo = 0.5, hi = 1.0 }
leak_rate = { lo = 0.1, hi = 0.8 }
lambda = { lo = 0.0001, hi = 1.0 }
mu = 0.0
sigma = { lo = 0.005, hi = 0.15 }
eta = 0.01
epochs = [3]
n_trials = 2
"#;
    let cfg: ExperimentConfig = toml::from_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.n_retrain, 3);
    assert_eq!(cfg.algorithms, vec![Algorithm::IncFed, Algorithm::FedIpIncFed]);
    assert_eq!(cfg.training.batch_size, 32);
}

#[test]
fn incfed_trial_is_the_plain_federated_readout() {
    use fedres_core::federation::{collect_and_solve, FederationConfig};
    use fedres_core::harness::{evaluate, federation_config, reservoir_config, run_trial, train_model, TrainedModel};
    use fedres_core::reservoir::init_reservoir;

    let cfg = quick(4);
    let data = load_data(&cfg).unwrap();
    let selection = data.selection(&data.split).unwrap();
    let trial = &sample_trials(&cfg.search, cfg.seed)[0];
    let acc = run_trial(&trial.1, Algorithm::IncFed, &selection, &cfg.training, trial.0).unwrap();
    assert_eq!(acc, run_trial(&trial.1, Algorithm::IncFed, &selection, &cfg.training, trial.0).unwrap());

    let reservoir = init_reservoir(&reservoir_config(&trial.1, selection.n_inputs, &cfg.training, trial.0)).unwrap();
    let fed: FederationConfig = federation_config(&trial.1, selection.train.len(), &cfg.training);
    let readout = collect_and_solve(&fed, &reservoir, &selection.train, selection.n_classes).unwrap();
    let manual = evaluate(&TrainedModel { reservoir, readout }, &selection.val, 0).unwrap();
    assert_eq!(acc, manual);
    let model = train_model(&trial.1, Algorithm::IncFed, &selection.train, selection.n_classes, selection.n_inputs, &cfg.training, trial.0).unwrap();
    assert_eq!(model.reservoir.ip, fedres_core::reservoir::IPState::initial(trial.1.units));
}

#[test]
fn single_retrain_has_zero_spread_and_mean_is_recomputable() {
    let mut cfg = quick(5);
    cfg.search.n_trials = 1;
    cfg.n_retrain = 1;
    let data = load_data(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let r = run_search(&pool, &cfg, &data, 1.0, Algorithm::FedIpIncFed).unwrap();
    assert_eq!((r.selected, r.std), (0, 0.0));
    let mut cfg3 = quick(5);
    cfg3.n_retrain = 3;
    let r3 = run_search(&pool, &cfg3, &data, 1.0, Algorithm::IncFed).unwrap();
    let mean = r3.runs.iter().map(|x| x.test.window).sum::<f64>() / 3.0;
    assert!((r3.mean - mean).abs() < 1e-12);
}

/// Five-seed synthetic suite at 25% and 100% of the training users.
#[test]
fn synthetic_trends_hold() {
    let pool = rayon::ThreadPoolBuilder::new().build().unwrap();
    let (mut val_inc, mut val_fed, mut quarter, mut full) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in 0..5u64 {
        let mut cfg = ExperimentConfig::synthetic_default(s);
        cfg.fractions = vec![0.25, 1.0];
        let data = load_data(&cfg).unwrap();
        let reports = sweep_fraction(&pool, &cfg, &data).unwrap();
        let best = |i: usize| reports[i].trials[reports[i].selected].validation.unwrap().window;
        // order: (0.25, IncFed), (0.25, FedIP), (1.0, IncFed), (1.0, FedIP)
        val_inc.push(best(2));
        val_fed.push(best(3));
        quarter.push(reports[1].mean);
        full.push(reports[3].mean);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = val_inc.iter().zip(&val_fed).filter(|(i, f)| f > i).count();
    assert!(mean(&val_fed) >= mean(&val_inc) - 0.01, "validation {val_fed:?} vs {val_inc:?}");
    assert!(wins >= 3, "validation wins {wins}: {val_fed:?} vs {val_inc:?}");
    assert!(mean(&full) >= mean(&quarter) - 0.02, "100% {full:?} vs 25% {quarter:?}");
}
