//! Cooperative learning over hybrid wireless networks: resource model,
//! question selection paradigms, quiz scoring, partition synchronization,
//! backbone injection and a deterministic network simulator.

pub mod injection;
pub mod node;
pub mod paradigm;
pub mod quiz;
pub mod resource;
pub mod sync;
pub mod trace;
pub mod metrics;
pub mod netsim;
pub mod scenario;
pub mod cli;
