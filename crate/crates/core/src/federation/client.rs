use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::plasticity::{local_ip_update_from, IPConfig};
use crate::readout::DesignAccumulator;
use crate::reservoir::ReservoirParams;

use super::wire::{PartialSums, RoundMessage, WeightUnit};

struct Session {
    reservoir: ReservoirParams,
    ip: IPConfig,
    n_rounds: u32,
    weight_unit: WeightUnit,
}

/// Client-side protocol state machine. Transport-agnostic: feed it decoded
/// messages, send back whatever it returns.
pub struct ClientNode {
    id: u32,
    data: ClientDataset,
    session: Option<Session>,
    finished: bool,
}

impl ClientNode {
    pub fn new(id: u32, data: ClientDataset) -> Self {
        Self { id, data, session: None, finished: false }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn weight(&self, unit: WeightUnit) -> u64 {
        match unit {
            WeightUnit::Timesteps => self.data.n_timesteps() as u64,
            WeightUnit::Sequences => self.data.sequences.len() as u64,
        }
    }

    /// Failures inside a round are reported to the server as `ClientError`
    /// rather than returned, so the server can name the failing client.
    pub fn handle(&mut self, msg: RoundMessage) -> Result<Option<RoundMessage>> {
        match msg {
            RoundMessage::InitBroadcast { reservoir, ip, n_rounds, weight_unit } => {
                if self.data.n_inputs().is_some_and(|m| m != reservoir.n_inputs()) {
                    return Ok(Some(self.error(0, format!(
                        "dataset has {} inputs, reservoir expects {}",
                        self.data.n_inputs().unwrap_or(0),
                        reservoir.n_inputs()
                    ))));
                }
                self.session = Some(Session { reservoir, ip, n_rounds, weight_unit });
                Ok(None)
            }
            RoundMessage::RoundDispatch { round, state } => {
                let s = self.session.as_ref().ok_or_else(|| Error::Protocol("RoundDispatch before InitBroadcast".into()))?;
                if round == 0 || round > s.n_rounds {
                    return Ok(Some(self.error(round, format!("round {round} outside 1..={}", s.n_rounds))));
                }
                match local_ip_update_from(&s.reservoir, &state, &self.data, &s.ip) {
                    Ok(updated) => Ok(Some(RoundMessage::ClientReply {
                        round,
                        client_id: self.id,
                        state: updated,
                        n_c: self.weight(s.weight_unit),
                    })),
                    Err(e) => Ok(Some(self.error(round, e.to_string()))),
                }
            }
            RoundMessage::SumsRequest { state, washout, n_outputs } => {
                let s = self.session.as_ref().ok_or_else(|| Error::Protocol("SumsRequest before InitBroadcast".into()))?;
                match self.partial_sums(&s.reservoir, state, washout as usize, n_outputs as usize) {
                    Ok(acc) => Ok(Some(RoundMessage::SumsReply(PartialSums { client_id: self.id, acc }))),
                    Err(e) => Ok(Some(self.error(0, e.to_string()))),
                }
            }
            RoundMessage::Complete => {
                self.finished = true;
                Ok(None)
            }
            other => Err(Error::Protocol(format!("client received {}", other.kind_name()))),
        }
    }

    fn partial_sums(&self, reservoir: &ReservoirParams, state: crate::reservoir::IPState, washout: usize, n_outputs: usize) -> Result<DesignAccumulator> {
        state.validate(reservoir.n_units())?;
        let mut acc = DesignAccumulator::new(n_outputs, reservoir.n_units());
        for s in &self.data.sequences {
            let traj = reservoir.run_sequence_with(&state, &s.inputs, washout)?;
            acc.accumulate(&traj, &s.labels)?;
        }
        Ok(acc)
    }

    fn error(&self, round: u32, message: String) -> RoundMessage {
        RoundMessage::ClientError { round, client_id: self.id, message }
    }
}
