//! Scenario files, experiment runs and the centralized reference solver.

mod config;
mod oracle;
mod run;

use thiserror::Error;

use crate::codegen::CodegenError;
use crate::ncp::NcpError;
use crate::netsim::NetsimError;

pub use config::{
    AlgorithmConfig, ArenaConfig, ChannelConfig, DirectiveConfig, EventConfig, JitterConfig, NodeConfig, ScenarioConfig,
    Scheme, SessionConfig,
};
pub use oracle::{centralized_oracle, OracleSolution, MAX_GRID_POINTS, MAX_NODES, MAX_VARS_PER_NODE};
pub use run::{
    compare_schemes, node_id, run_scenario, summarize, Comparison, MetricsRow, RunMetrics, SchemeStats, Summary,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Netsim(#[from] NetsimError),
    #[error(transparent)]
    Ncp(#[from] NcpError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error("instance too large for the oracle: {0}")]
    TooLarge(String),
    #[error("no feasible grid point")]
    Infeasible,
}
