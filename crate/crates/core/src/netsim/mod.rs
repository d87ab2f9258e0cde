//! Deterministic tick-based network simulator: random-waypoint mobility,
//! unit-disk contacts, partitions and the full cooperative-learning loop.

pub mod contact;
pub mod mobility;
pub mod world;

pub use contact::{partitions, ContactGraph};
pub use mobility::{Area, Position, Waypoint};
pub use world::{
    run, Action, AuthoringRates, FetchRequest, Lecture, NodeConfig, QuizSpec, RunOutput,
    ScriptedAction, SimConfig, SimPolicy, World,
};
