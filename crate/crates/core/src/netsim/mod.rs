//! Network simulator: channel model, topology and the round loop.

mod channel;
mod sim;
mod topology;

pub use channel::{channel_gain, link_capacity, sinr_from, Arena, ChannelEnvironment, Position};
pub use sim::{measure, model_sinr, ExecMode, Measurement, NodeStack, SimulationState};
pub use topology::{NodeId, NodeSpec, Role, Session, SessionId, Topology};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetsimError {
    #[error("two nodes occupy the same position")]
    CoincidentPositions,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("dispatch failed: {0}")]
    Dispatch(String),
}
