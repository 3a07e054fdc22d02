use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::channel::{Arena, Position};
use super::NetsimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u32);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Relay,
    Destination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Short alphanumeric label used in variable names and reports.
    pub name: String,
    pub start: Position,
    pub role: Role,
    /// Hold-mode nodes keep their start position for the whole run.
    pub hold: bool,
    /// Maximum flight speed in m/s.
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub source: NodeId,
    pub destination: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub sessions: Vec<Session>,
    pub arena: Arena,
}

impl Topology {
    /// Checks ids, names and session endpoints.
    pub fn validate(&self) -> Result<(), NetsimError> {
        if self.nodes.is_empty() {
            return Err(NetsimError::InvalidTopology("no nodes".into()));
        }
        let mut names = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(NetsimError::InvalidTopology(format!("node `{}` has id {} at index {i}", n.name, n.id)));
            }
            let well_formed = !n.name.is_empty() && n.name.chars().all(|c| c.is_ascii_alphanumeric());
            if !well_formed {
                return Err(NetsimError::InvalidTopology(format!("node name `{}` must be alphanumeric", n.name)));
            }
            if !names.insert(n.name.clone()) {
                return Err(NetsimError::InvalidTopology(format!("duplicate node name `{}`", n.name)));
            }
            if !self.arena.contains(&n.start) {
                return Err(NetsimError::InvalidTopology(format!("node `{}` starts outside the arena", n.name)));
            }
            if !(n.v_max >= 0.0) {
                return Err(NetsimError::InvalidTopology(format!("node `{}` has negative v_max", n.name)));
            }
        }
        let mut ids = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for s in &self.sessions {
            if !ids.insert(s.id) {
                return Err(NetsimError::InvalidTopology(format!("duplicate session id {}", s.id)));
            }
            let src = self.node(s.source)?;
            let dst = self.node(s.destination)?;
            if src.role != Role::Source {
                return Err(NetsimError::InvalidTopology(format!("session {} source `{}` is not a source", s.id, src.name)));
            }
            if dst.role != Role::Destination {
                return Err(NetsimError::InvalidTopology(format!(
                    "session {} destination `{}` is not a destination",
                    s.id, dst.name
                )));
            }
            if !sources.insert(s.source) {
                return Err(NetsimError::InvalidTopology(format!("node `{}` sources more than one session", src.name)));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeSpec, NetsimError> {
        self.nodes.get(id.index()).ok_or(NetsimError::UnknownNode(id))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.iter().find(|s| s.id == id)
    }

    /// Destinations of all sessions, sorted and deduplicated.
    pub fn destinations(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.sessions.iter().map(|s| s.destination).collect();
        set.into_iter().collect()
    }
}
