use std::path::Path;
use std::process::{Command, Output};

use fedres_core::data::SplitRequest;
use fedres_core::harness::{DatasetSource, ExperimentConfig, SearchSpace, SessionConfig};
use fedres_core::reservoir::ReservoirConfig;

fn fedres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedres")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn session_file(dir: &Path) -> std::path::PathBuf {
    ok(fedres(&["synth", "--out", dir.join("data").to_str().unwrap(), "--users", "3", "--steps", "600", "--window", "50", "--seed", "4"]));
    let mut cfg = SessionConfig::example();
    cfg.reservoir = ReservoirConfig { seed: 8, ..ReservoirConfig::new(40, 3) };
    cfg.federation.clients = vec![0, 1, 2];
    cfg.federation.n_rounds = 2;
    cfg.dataset = DatasetSource::Manifest { path: "data/manifest.json".into() };
    let path = dir.join("session.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn federate_writes_checkpoint_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = session_file(dir.path());
    let ckpt = dir.path().join("model.bin");
    let summary = dir.path().join("summary.json");
    let stdout = ok(fedres(&["federate", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--summary", summary.to_str().unwrap()]));
    assert!(stdout.contains("round   2"), "{stdout}");
    let (params, readout) = fedres_core::checkpoint::load(&ckpt).unwrap();
    assert_eq!(params.n_units(), 40);
    assert_eq!(readout.unwrap().shape(), (4, 41));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(doc["rounds"].as_array().unwrap().len(), 2);
}

#[test]
fn separate_processes_match_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = session_file(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    let local = dir.path().join("local.bin");
    ok(fedres(&["federate", "--config", cfg_s, "--checkpoint", local.to_str().unwrap()]));

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let remote = dir.path().join("remote.bin");
    let server = Command::new(env!("CARGO_BIN_EXE_fedres"))
        .args(["serve-server", "--config", cfg_s, "--listen", &addr, "--checkpoint", remote.to_str().unwrap()])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let clients: Vec<_> = (0..3)
        .map(|id| {
            Command::new(env!("CARGO_BIN_EXE_fedres"))
                .args(["serve-client", "--config", cfg_s, "--connect", &addr, "--client-id", &id.to_string()])
                .stderr(std::process::Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in clients {
        assert!(c.wait().unwrap().success());
    }
    let out = server.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(local).unwrap(), std::fs::read(remote).unwrap());
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::synthetic_default(2);
    if let DatasetSource::Synth { synth, .. } = &mut cfg.dataset {
        synth.steps_per_user = 800;
    }
    cfg.split = SplitRequest::Counts { train: 3, val: 1, test: 1 };
    cfg.search = SearchSpace { units: vec![20], n_trials: 2, epochs: vec![1], ..SearchSpace::wesad() };
    cfg.n_retrain = 1;
    cfg.fractions = vec![0.5, 1.0];
    let path = dir.path().join("exp.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("results");
    let table = ok(fedres(&["sweep", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(table.contains("FedIP+IncFed") && table.contains("50%"), "{table}");
    let again = ok(fedres(&["report", "--input", out.join("reports.json").to_str().unwrap()]));
    assert_eq!(again, table);
    let one = ok(fedres(&["search", "--config", path.to_str().unwrap(), "--algorithm", "incfed", "--out", dir.path().join("one").to_str().unwrap()]));
    assert!(!one.contains("FedIP+IncFed"));
}

#[test]
fn example_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, name) in [("experiment", "e.toml"), ("session", "s.toml")] {
        let text = ok(fedres(&["example-config", kind]));
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        if kind == "experiment" {
            ExperimentConfig::load(&path).unwrap();
        } else {
            SessionConfig::load(&path).unwrap();
        }
    }
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = \"x\"").unwrap();
    let out = fedres(&["sweep", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
    let out = fedres(&["serve-client", "--config", path.to_str().unwrap(), "--connect", "127.0.0.1:1", "--client-id", "0", "--transport", "in-process"]);
    assert!(!out.status.success());
}
