//! Federated intrinsic plasticity followed by the exact federated readout.
//!
//! A session runs as: one `InitBroadcast` with the full reservoir and the
//! plasticity hyperparameters; `n_rounds` rounds in which every client gets
//! the global `(g, b)`, runs its local epochs and replies with its updated
//! pair and weight `n_c`; then one `SumsRequest` with the frozen `(g, b)`
//! answered by each client's readout partial sums. The server consumes
//! replies sorted by client id, so results do not depend on scheduling.

mod client;
mod transport;
pub mod wire;

pub use client::ClientNode;
pub use transport::{run_socket_client, InProcessTransport, SocketTransport, Transport};
pub use wire::{payload_size, PartialSums, RoundMessage, WeightUnit};

use std::net::TcpListener;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::plasticity::IPConfig;
use crate::readout::{merge, solve, DesignAccumulator, ReadoutSolution};
use crate::reservoir::{IPState, ReservoirParams};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransportKind {
    #[default]
    InProcess,
    /// Listens on `address` and connects loopback clients to it.
    Socket { address: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub n_rounds: u32,
    pub clients: Vec<u32>,
    pub ip: IPConfig,
    pub lambda: f64,
    #[serde(default)]
    pub washout: usize,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub weight_unit: WeightUnit,
    /// Keep every frame's bytes in the message log, not just its size.
    #[serde(default)]
    pub record_frames: bool,
}

impl FederationConfig {
    pub fn new(clients: Vec<u32>, ip: IPConfig, n_rounds: u32, lambda: f64) -> Self {
        Self {
            n_rounds,
            clients,
            ip,
            lambda,
            washout: 0,
            transport: TransportKind::InProcess,
            weight_unit: WeightUnit::Timesteps,
            record_frames: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::InvalidConfig("n_rounds must be >= 1".into()));
        }
        self.validate_clients()?;
        self.ip.validate()
    }

    fn validate_clients(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::InvalidConfig("no clients".into()));
        }
        let mut ids = self.clients.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.clients.len() {
            return Err(Error::InvalidConfig("client ids must be unique".into()));
        }
        Ok(())
    }
}

/// Weighted mean of client states with weights `n_c / Σ n_c`, summed in
/// ascending client-id order, gains clamped to the floor.
pub fn aggregate(replies: &[(u32, IPState, u64)]) -> Result<IPState> {
    let first = replies.first().ok_or(Error::Empty("aggregate replies"))?;
    let n_units = first.1.len();
    let mut sorted: Vec<&(u32, IPState, u64)> = replies.iter().collect();
    sorted.sort_by_key(|r| r.0);
    let mut total: u64 = 0;
    for (id, state, n_c) in &sorted {
        if state.gain.len() != n_units || state.bias.len() != n_units {
            return Err(Error::Dimension { context: "aggregate", expected: n_units, actual: state.gain.len() });
        }
        if *n_c == 0 {
            return Err(Error::InvalidConfig(format!("client {id} reported n_c = 0")));
        }
        total += n_c;
    }
    let mut out = IPState { gain: nalgebra::DVector::zeros(n_units), bias: nalgebra::DVector::zeros(n_units) };
    for (_, state, n_c) in sorted {
        let w = *n_c as f64 / total as f64;
        for i in 0..n_units {
            out.gain[i] += w * state.gain[i];
            out.bias[i] += w * state.bias[i];
        }
    }
    out.clamp_gain();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ToClient,
    FromClient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub direction: Direction,
    pub client: u32,
    pub kind: u8,
    pub round: Option<u32>,
    pub size: usize,
    pub frame: Option<Vec<u8>>,
}

/// Server-side record of every frame, in a deterministic order: sends in
/// client-id order, replies logged after sorting by client id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessageLog {
    pub entries: Vec<LogEntry>,
}

impl MessageLog {
    pub fn of_kind(&self, kind: u8) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.size).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub state: IPState,
    pub wall_time: Duration,
}

/// Server end of a session over any transport.
pub struct Server<T: Transport> {
    transport: T,
    clients: Vec<u32>,
    record_frames: bool,
    log: MessageLog,
}

impl<T: Transport> Server<T> {
    pub fn new(transport: T, clients: &[u32], record_frames: bool) -> Self {
        let mut clients = clients.to_vec();
        clients.sort_unstable();
        Self { transport, clients, record_frames, log: MessageLog::default() }
    }

    fn record(&mut self, direction: Direction, client: u32, msg_kind: u8, round: Option<u32>, frame: &[u8]) {
        self.log.entries.push(LogEntry {
            direction,
            client,
            kind: msg_kind,
            round,
            size: frame.len(),
            frame: self.record_frames.then(|| frame.to_vec()),
        });
    }

    fn broadcast(&mut self, msg: &RoundMessage) -> Result<()> {
        let frame = wire::encode(msg);
        for id in self.clients.clone() {
            self.record(Direction::ToClient, id, msg.kind(), msg.round(), &frame);
            self.transport.send(id, &frame)?;
        }
        Ok(())
    }

    /// One reply per client, sorted by client id.
    fn gather(&mut self, round: u32) -> Result<Vec<(u32, RoundMessage)>> {
        let mut got: Vec<(u32, Vec<u8>, RoundMessage)> = Vec::with_capacity(self.clients.len());
        while got.len() < self.clients.len() {
            let (id, frame) = self.transport.recv().map_err(|e| match e {
                Error::ClientFailed { client, message, .. } => Error::ClientFailed { client, round, message },
                e => e,
            })?;
            let msg = wire::decode(&frame)?;
            if let RoundMessage::ClientError { client_id, message, .. } = msg {
                return Err(Error::ClientFailed { client: client_id, round, message });
            }
            if got.iter().any(|g| g.0 == id) {
                return Err(Error::Protocol(format!("client {id} replied twice in round {round}")));
            }
            got.push((id, frame, msg));
        }
        got.sort_by_key(|g| g.0);
        Ok(got
            .into_iter()
            .map(|(id, frame, msg)| {
                self.record(Direction::FromClient, id, msg.kind(), msg.round(), &frame);
                (id, msg)
            })
            .collect())
    }

    pub fn init(&mut self, reservoir: &ReservoirParams, ip: &IPConfig, n_rounds: u32, weight_unit: WeightUnit) -> Result<()> {
        self.broadcast(&RoundMessage::InitBroadcast { reservoir: reservoir.clone(), ip: ip.clone(), n_rounds, weight_unit })
    }

    pub fn round(&mut self, round: u32, state: &IPState) -> Result<IPState> {
        self.broadcast(&RoundMessage::RoundDispatch { round, state: state.clone() })?;
        let replies = self
            .gather(round)?
            .into_iter()
            .map(|(id, msg)| match msg {
                RoundMessage::ClientReply { round: r, client_id, state, n_c } if r == round && client_id == id => Ok((id, state, n_c)),
                m => Err(Error::Protocol(format!("client {id} answered round {round} with {}", m.kind_name()))),
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(&replies)
    }

    /// Per-client partial sums, in ascending client-id order.
    pub fn collect(&mut self, state: &IPState, washout: usize, n_outputs: usize) -> Result<Vec<PartialSums>> {
        self.broadcast(&RoundMessage::SumsRequest { state: state.clone(), washout: washout as u32, n_outputs: n_outputs as u32 })?;
        self.gather(0)?
            .into_iter()
            .map(|(id, msg)| match msg {
                RoundMessage::SumsReply(p) if p.client_id == id => Ok(p),
                m => Err(Error::Protocol(format!("client {id} answered SumsRequest with {}", m.kind_name()))),
            })
            .collect()
    }

    pub fn complete(mut self) -> Result<MessageLog> {
        self.broadcast(&RoundMessage::Complete)?;
        Ok(std::mem::take(&mut self.log))
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }
}

#[derive(Clone, Debug)]
pub struct FederationOutcome {
    pub state: IPState,
    pub history: Vec<RoundRecord>,
    pub solution: Option<ReadoutSolution>,
    pub log: MessageLog,
}

/// What a session should do after the init broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plan {
    pub fedip: bool,
    /// `Some(n_outputs)` runs the readout collection and solve.
    pub readout: Option<usize>,
}

fn drive<T: Transport>(server: &mut Server<T>, cfg: &FederationConfig, reservoir: &ReservoirParams, plan: Plan) -> Result<(IPState, Vec<RoundRecord>, Option<ReadoutSolution>)> {
    let n_rounds = if plan.fedip { cfg.n_rounds } else { 0 };
    server.init(reservoir, &cfg.ip, n_rounds, cfg.weight_unit)?;
    let mut state = reservoir.ip.clone();
    let mut history = Vec::with_capacity(n_rounds as usize);
    for round in 1..=n_rounds {
        let started = Instant::now();
        state = server.round(round, &state)?;
        history.push(RoundRecord { round, state: state.clone(), wall_time: started.elapsed() });
    }
    let solution = match plan.readout {
        Some(n_outputs) => {
            let parts = server.collect(&state, cfg.washout, n_outputs)?;
            let accs: Vec<DesignAccumulator> = parts.into_iter().map(|p| p.acc).collect();
            Some(solve(&merge(&accs)?, cfg.lambda)?)
        }
        None => None,
    };
    Ok((state, history, solution))
}

fn check_plan(cfg: &FederationConfig, reservoir: &ReservoirParams, plan: Plan) -> Result<()> {
    if plan.fedip {
        cfg.validate()?;
    } else {
        cfg.validate_clients()?;
        cfg.ip.validate()?;
    }
    reservoir.ip.validate(reservoir.n_units())
}

/// Runs a full session over the configured transport. `datasets[i]` belongs
/// to `cfg.clients[i]`.
pub fn run_session(cfg: &FederationConfig, reservoir: &ReservoirParams, datasets: &[ClientDataset], plan: Plan) -> Result<FederationOutcome> {
    check_plan(cfg, reservoir, plan)?;
    if datasets.len() != cfg.clients.len() {
        return Err(Error::Dimension { context: "datasets per client", expected: cfg.clients.len(), actual: datasets.len() });
    }
    let nodes: Vec<ClientNode> = cfg.clients.iter().zip(datasets).map(|(&id, d)| ClientNode::new(id, d.clone())).collect();
    match &cfg.transport {
        TransportKind::InProcess => {
            let mut server = Server::new(InProcessTransport::spawn(nodes), &cfg.clients, cfg.record_frames);
            let (state, history, solution) = drive(&mut server, cfg, reservoir, plan)?;
            Ok(FederationOutcome { state, history, solution, log: server.complete()? })
        }
        TransportKind::Socket { address } => {
            let listener = TcpListener::bind(address.as_str())?;
            let addr = listener.local_addr()?;
            let handles: Vec<_> = nodes
                .into_iter()
                .map(|node| std::thread::spawn(move || run_socket_client(addr, node, Duration::from_secs(30))))
                .collect();
            let result = serve_socket(cfg, reservoir, &listener, plan);
            for h in handles {
                let joined = h.join().map_err(|_| Error::Protocol("socket client panicked".into()))?;
                if result.is_ok() {
                    joined?;
                }
            }
            result
        }
    }
}

/// Server side of a socket session: waits for every configured client to
/// join on `listener`, then runs the plan.
pub fn serve_socket(cfg: &FederationConfig, reservoir: &ReservoirParams, listener: &TcpListener, plan: Plan) -> Result<FederationOutcome> {
    check_plan(cfg, reservoir, plan)?;
    let transport = SocketTransport::accept(listener, &cfg.clients)?;
    let mut server = Server::new(transport, &cfg.clients, cfg.record_frames);
    let (state, history, solution) = drive(&mut server, cfg, reservoir, plan)?;
    Ok(FederationOutcome { state, history, solution, log: server.complete()? })
}

/// FedIP rounds only.
pub fn run_federation(cfg: &FederationConfig, reservoir: &ReservoirParams, datasets: &[ClientDataset]) -> Result<FederationOutcome> {
    run_session(cfg, reservoir, datasets, Plan { fedip: true, readout: None })
}

/// Exact federated readout with `reservoir.ip` frozen.
pub fn collect_and_solve(cfg: &FederationConfig, reservoir: &ReservoirParams, datasets: &[ClientDataset], n_outputs: usize) -> Result<ReadoutSolution> {
    let out = run_session(cfg, reservoir, datasets, Plan { fedip: false, readout: Some(n_outputs) })?;
    Ok(out.solution.expect("readout requested"))
}
