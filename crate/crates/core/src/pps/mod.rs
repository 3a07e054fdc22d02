//! Per-node protocol stack: register plane, decision plane and data plane.

mod decision;
pub mod registers;

pub use decision::{
    data_plane_apply, own_values, solve_local, Actuation, DecisionConfig, DecisionState, LocalProblem, NeighborMessage,
};
pub use registers::{keys, Lut, LutValue, RegisterPlane};
