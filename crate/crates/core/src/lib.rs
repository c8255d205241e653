//! Federated echo state networks with intrinsic plasticity.
//!
//! A fixed random reservoir is shared by all clients. Clients adapt the
//! per-unit gain and bias locally ([`plasticity`]), a server averages them
//! ([`federation`]), and a linear readout is fitted from summed sufficient
//! statistics ([`readout`]), so no raw data leaves a client.

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod plasticity;
pub mod readout;
pub mod reservoir;
pub mod seed;
pub mod spectral;

pub use data::{ClientDataset, RawSeries, Sequence, SplitRequest, SplitSpec};
pub use error::{Error, Result};
pub use federation::{aggregate, run_federation, run_session, serve_socket, FederationConfig, FederationOutcome, Plan, TransportKind};
pub use harness::{Algorithm, ExperimentConfig, ExperimentReport, SearchSpace, SessionConfig, TrialConfig};
pub use plasticity::{local_ip_update, IPConfig, RuleVariant};
pub use readout::{solve, DesignAccumulator, ReadoutSolution};
pub use reservoir::{init_reservoir, IPState, ReservoirConfig, ReservoirParams, StateTrajectory};
