//! Register Plane: per-layer state and solution lookup tables.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::codegen::NetworkView;
use crate::ncp::LayerId;
use crate::netsim::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub enum LutValue {
    Real(f64),
    Vector(Vec<f64>),
    Nodes(Vec<NodeId>),
    View(Arc<NetworkView>),
}

impl LutValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            LutValue::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            LutValue::Vector(v) => Some(v),
            _ => None,
        }
    }
}

/// Key-value store with a version stamp per key. Values are replaced whole.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lut {
    entries: BTreeMap<String, (LutValue, u64)>,
}

impl Lut {
    pub fn set(&mut self, key: impl Into<String>, value: LutValue) {
        let key = key.into();
        let version = self.entries.get(&key).map_or(1, |(_, v)| v + 1);
        self.entries.insert(key, (value, version));
    }

    pub fn set_real(&mut self, key: impl Into<String>, x: f64) {
        self.set(key, LutValue::Real(x));
    }

    pub fn get(&self, key: &str) -> Option<&LutValue> {
        self.entries.get(key).map(|(v, _)| v)
    }

    pub fn real(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(LutValue::as_real)
    }

    pub fn version(&self, key: &str) -> u64 {
        self.entries.get(key).map_or(0, |(_, v)| *v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

pub mod keys {
    pub const POSITION: &str = "position";
    pub const HOLD: &str = "hold";
    pub const V_MAX: &str = "v_max";
    pub const TX_POWER: &str = "tx_power";
    pub const POWER_LO: &str = "hw.power_lo";
    pub const POWER_HI: &str = "hw.power_hi";
    pub const MIN_SNR: &str = "hw.min_snr";
    pub const NOISE: &str = "hw.noise";
    pub const BANDWIDTH: &str = "hw.bandwidth";
    pub const G0: &str = "chan.g0";
    pub const ETA: &str = "chan.eta";
    pub const D0: &str = "chan.d0";
    pub const DT: &str = "round.dt";
    pub const VIEW: &str = "view";
    pub const NEIGHBORS: &str = "neighbors";
    pub const LOCATION: &str = "location";

    pub fn next_hop(dest: &str) -> String {
        format!("next_hop.{dest}")
    }

    pub fn forwarding(dest: &str) -> String {
        format!("forwarding.{dest}")
    }

    pub fn rate(session: u32) -> String {
        format!("rate.{session}")
    }

    pub fn sinr(rx: &str, dest: &str) -> String {
        format!("sinr.{rx}.{dest}")
    }

    pub fn capacity(rx: &str, dest: &str) -> String {
        format!("capacity.{rx}.{dest}")
    }

    pub fn distance(peer: &str) -> String {
        format!("dist.{peer}")
    }
}

/// Network-state tables `LUT_L0..LUT_L4` and solution tables `LUT_S0..LUT_S4`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegisterPlane {
    pub state: [Lut; 5],
    pub solution: [Lut; 5],
}

impl RegisterPlane {
    pub fn l(&self, layer: LayerId) -> &Lut {
        &self.state[layer.index()]
    }

    pub fn l_mut(&mut self, layer: LayerId) -> &mut Lut {
        &mut self.state[layer.index()]
    }

    pub fn s(&self, layer: LayerId) -> &Lut {
        &self.solution[layer.index()]
    }

    pub fn s_mut(&mut self, layer: LayerId) -> &mut Lut {
        &mut self.solution[layer.index()]
    }

    pub fn view(&self) -> Option<&Arc<NetworkView>> {
        match self.l(LayerId::Network).get(keys::VIEW) {
            Some(LutValue::View(v)) => Some(v),
            _ => None,
        }
    }

    pub fn position(&self) -> Option<[f64; 3]> {
        let v = self.l(LayerId::Motion).get(keys::POSITION)?.as_vector()?;
        (v.len() == 3).then(|| [v[0], v[1], v[2]])
    }
}
