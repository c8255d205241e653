//! A single federated training run described by one file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_structured, DatasetSource};
use crate::data::{ClientDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, Plan};
use crate::plasticity::IPConfig;
use crate::reservoir::ReservoirConfig;

/// Client `clients[i]` owns the `i`-th user in ascending id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub reservoir: ReservoirConfig,
    pub federation: FederationConfig,
    pub dataset: DatasetSource,
    /// `false` skips the IP rounds and fits the readout on the initial reservoir.
    #[serde(default = "fedip_default")]
    pub fedip: bool,
}

fn fedip_default() -> bool {
    true
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: SessionConfig = read_structured(path)?;
        cfg.dataset.resolve_from(path);
        cfg.reservoir.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn example() -> Self {
        let synth = SynthConfig::default();
        let reservoir = ReservoirConfig { spectral_radius: 0.8, leak_rate: 0.5, ..ReservoirConfig::new(100, synth.n_features) };
        let clients = (0..synth.n_users as u32).collect();
        Self {
            reservoir,
            federation: FederationConfig::new(clients, IPConfig::default(), 3, 1e-2),
            dataset: DatasetSource::Synth { synth, window_len: 100 },
            fedip: true,
        }
    }

    /// One dataset per configured client, in client order.
    pub fn datasets(&self) -> Result<Vec<ClientDataset>> {
        let users = self.dataset.load_users()?;
        let n = self.federation.clients.len();
        if users.len() < n {
            return Err(Error::InvalidConfig(format!("{n} clients configured but the dataset has {} users", users.len())));
        }
        let out: Vec<ClientDataset> = users.into_values().take(n).collect();
        if let Some(d) = out.iter().find(|d| d.n_inputs() != Some(self.reservoir.n_inputs)) {
            return Err(Error::Dimension { context: "user features vs reservoir inputs", expected: self.reservoir.n_inputs, actual: d.n_inputs().unwrap_or(0) });
        }
        Ok(out)
    }

    pub fn client_dataset(&self, client: u32) -> Result<ClientDataset> {
        let i = self
            .federation
            .clients
            .iter()
            .position(|&c| c == client)
            .ok_or_else(|| Error::InvalidConfig(format!("client {client} is not in the session")))?;
        Ok(self.datasets()?.swap_remove(i))
    }

    pub fn plan(&self, n_classes: usize) -> Plan {
        Plan { fedip: self.fedip, readout: Some(n_classes) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_assigns_users_in_id_order() {
        let mut cfg = SessionConfig::example();
        if let DatasetSource::Synth { synth, .. } = &mut cfg.dataset {
            synth.steps_per_user = 400;
        }
        let all = cfg.datasets().unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.windows(2).all(|w| w[0].user_id < w[1].user_id));
        assert_eq!(cfg.client_dataset(3).unwrap().user_id, all[3].user_id);
        assert!(cfg.client_dataset(9).is_err());
        cfg.reservoir.n_inputs = 2;
        assert!(cfg.datasets().is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = SessionConfig::example();
        let text = toml::to_string_pretty(&cfg).unwrap();
        assert_eq!(toml::from_str::<SessionConfig>(&text).unwrap(), cfg);
    }
}
