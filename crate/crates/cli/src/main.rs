//! `fedres`: run experiments and federated training sessions.

use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fedres_core::checkpoint;
use fedres_core::data::{load_manifest, synth_har_raw, write_manifest, write_user_csv, DatasetManifest, SynthConfig};
use fedres_core::federation::{run_session, run_socket_client, serve_socket, ClientNode, FederationOutcome, TransportKind};
use fedres_core::harness::{load_data, read_report_json, run_search, sweep_fraction, sweep_table, trial_pool, write_reports, Algorithm, DatasetSource, ExperimentConfig, ExperimentReport, SessionConfig};
use fedres_core::reservoir::{init_reservoir, ReservoirParams};

#[derive(Parser)]
#[command(name = "fedres", version, about = "Federated echo state networks with intrinsic plasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random search plus retraining for one fraction of the training users.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Restrict to these algorithms (default: those in the config).
        #[arg(long = "algorithm")]
        algorithms: Vec<Algorithm>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Search at every configured fraction and print the accuracy table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print the table for a saved `reports.json`.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run a whole federated session locally.
    Federate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = TransportArg::InProcess)]
        transport: TransportArg,
        /// Bind address for `--transport socket`.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Write the trained reservoir and readout here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write a JSON summary (rounds and message sizes) here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Coordinate a session with remote `serve-client` processes.
    ServeServer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = TransportArg::Socket)]
        transport: TransportArg,
        #[arg(long)]
        listen: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Serve one client of a session from its local data.
    ServeClient {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = TransportArg::Socket)]
        transport: TransportArg,
        #[arg(long)]
        connect: SocketAddr,
        #[arg(long)]
        client_id: u32,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
    /// Write synthetic per-user CSVs and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        users: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 4000)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print an example config file.
    ExampleConfig {
        #[arg(value_enum)]
        kind: ExampleKind,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    InProcess,
    Socket,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleKind {
    Experiment,
    Session,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Search { config, fraction, algorithms, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let algorithms = if algorithms.is_empty() { cfg.algorithms.clone() } else { algorithms };
            let pool = trial_pool()?;
            let data = load_data(&cfg)?;
            let reports = algorithms.iter().map(|&a| run_search(&pool, &cfg, &data, fraction, a)).collect::<fedres_core::Result<Vec<_>>>()?;
            finish_reports(&out, &reports)
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let pool = trial_pool()?;
            let data = load_data(&cfg)?;
            finish_reports(&out, &sweep_fraction(&pool, &cfg, &data)?)
        }
        Command::Report { input } => {
            let reports = read_report_json(&input).with_context(|| format!("reading {}", input.display()))?;
            print!("{}", sweep_table(&reports));
            Ok(())
        }
        Command::Federate { config, transport, listen, checkpoint, summary } => {
            let mut cfg = SessionConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            cfg.federation.transport = match transport {
                TransportArg::InProcess => TransportKind::InProcess,
                TransportArg::Socket => TransportKind::Socket { address: listen },
            };
            let datasets = cfg.datasets()?;
            let reservoir = init_reservoir(&cfg.reservoir)?;
            let outcome = run_session(&cfg.federation, &reservoir, &datasets, cfg.plan(datasets[0].n_classes))?;
            finish_session(&reservoir, outcome, checkpoint.as_deref(), summary.as_deref())
        }
        Command::ServeServer { config, transport, listen, checkpoint, summary } => {
            require_socket(transport)?;
            let cfg = SessionConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let n_classes = match &cfg.dataset {
                DatasetSource::Synth { synth, .. } => synth.n_classes,
                DatasetSource::Manifest { path } => load_manifest(path)?.0.n_classes,
            };
            let reservoir = init_reservoir(&cfg.reservoir)?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("listening on {} for clients {:?}", listener.local_addr()?, cfg.federation.clients);
            let outcome = serve_socket(&cfg.federation, &reservoir, &listener, cfg.plan(n_classes))?;
            finish_session(&reservoir, outcome, checkpoint.as_deref(), summary.as_deref())
        }
        Command::ServeClient { config, transport, connect, client_id, timeout } => {
            require_socket(transport)?;
            let cfg = SessionConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let data = cfg.client_dataset(client_id)?;
            eprintln!("client {client_id} serving user {} ({} timesteps)", data.user_id, data.n_timesteps());
            run_socket_client(connect, ClientNode::new(client_id, data), Duration::from_secs(timeout))?;
            Ok(())
        }
        Command::Synth { out, users, classes, steps, window, seed } => {
            std::fs::create_dir_all(&out)?;
            let synth = SynthConfig { n_users: users, n_classes: classes, steps_per_user: steps, seed, ..SynthConfig::default() };
            let raws = synth_har_raw(&synth)?;
            for r in &raws {
                write_user_csv(&out, r)?;
            }
            let manifest = DatasetManifest { users: raws.iter().map(|r| r.user_id.clone()).collect(), n_features: synth.n_features, n_classes: classes, window_len: window };
            let path = out.join("manifest.json");
            write_manifest(&path, &manifest)?;
            println!("wrote {} users to {}", raws.len(), path.display());
            Ok(())
        }
        Command::ExampleConfig { kind } => {
            let text = match kind {
                ExampleKind::Experiment => ExperimentConfig::synthetic_default(0).to_toml()?,
                ExampleKind::Session => SessionConfig::example().to_toml()?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn require_socket(t: TransportArg) -> Result<()> {
    if t != TransportArg::Socket {
        bail!("remote nodes only run over --transport socket; use `federate` for in-process sessions");
    }
    Ok(())
}

fn finish_reports(out: &Path, reports: &[ExperimentReport]) -> Result<()> {
    let (json, csv) = write_reports(out, reports)?;
    print!("{}", sweep_table(reports));
    eprintln!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn finish_session(reservoir: &ReservoirParams, outcome: FederationOutcome, ckpt: Option<&Path>, summary: Option<&Path>) -> Result<()> {
    for r in &outcome.history {
        let g = &r.state.gain;
        println!("round {:>3}: gain mean {:.4}, bias mean {:+.4}, {:.1} ms", r.round, g.mean(), r.state.bias.mean(), r.wall_time.as_secs_f64() * 1e3);
    }
    println!("{} messages, {} bytes", outcome.log.entries.len(), outcome.log.total_bytes());
    if let Some(path) = ckpt {
        let trained = reservoir.with_ip(outcome.state.clone());
        checkpoint::save(path, &trained, outcome.solution.as_ref().map(|s| &s.w_out))?;
        eprintln!("wrote {}", path.display());
    }
    if let Some(path) = summary {
        let doc = serde_json::json!({
            "rounds": outcome.history.iter().map(|r| serde_json::json!({
                "round": r.round,
                "gain": r.state.gain.as_slice(),
                "bias": r.state.bias.as_slice(),
            })).collect::<Vec<_>>(),
            "messages": outcome.log.entries.iter().map(|e| serde_json::json!({
                "direction": format!("{:?}", e.direction),
                "client": e.client,
                "kind": fedres_core::federation::wire::kind_name(e.kind),
                "round": e.round,
                "bytes": e.size,
            })).collect::<Vec<_>>(),
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}
