//! Log-distance path loss, SINR and Shannon capacity.

use serde::{Deserialize, Serialize};

use super::NetsimError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn axis(&self, a: usize) -> f64 {
        match a {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn set_axis(&mut self, a: usize, v: f64) {
        match a {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn distance_squared(&self, o: &Position) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, o: &Position) -> f64 {
        self.distance_squared(o).sqrt()
    }
}

/// Axis-aligned flight area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Arena {
    pub fn contains(&self, p: &Position) -> bool {
        (0..3).all(|a| p.axis(a) >= self.min[a] && p.axis(a) <= self.max[a])
    }

    pub fn clamp(&self, p: Position) -> Position {
        let mut q = p;
        for a in 0..3 {
            q.set_axis(a, p.axis(a).clamp(self.min[a], self.max[a]));
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEnvironment {
    /// Reference gain at the near-field distance.
    pub g0: f64,
    /// Path-loss exponent.
    pub eta: f64,
    /// Near-field clamp distance in meters.
    pub d0: f64,
    pub noise_mw: f64,
    pub bandwidth_hz: f64,
    /// Maximum distance for a routing candidate.
    pub d_max: f64,
    /// Independent per-message drop probability.
    pub loss: f64,
    /// Seconds per round.
    pub dt: f64,
    pub seed: u64,
}

impl Default for ChannelEnvironment {
    fn default() -> Self {
        Self {
            g0: 1e-3,
            eta: 2.7,
            d0: 1.0,
            noise_mw: 1e-4,
            bandwidth_hz: 5e5,
            d_max: 40.0,
            loss: 0.0,
            dt: 1.0,
            seed: 0,
        }
    }
}

/// `g0 / max(d, d0)^eta`, evaluated as `g0 * max(d², d0²)^(-eta/2)` so that
/// it agrees bit-for-bit with the symbolic gain used in constraints.
pub fn channel_gain(a: &Position, b: &Position, env: &ChannelEnvironment) -> Result<f64, NetsimError> {
    if a == b {
        return Err(NetsimError::CoincidentPositions);
    }
    Ok(gain_unchecked(a, b, env))
}

impl ChannelEnvironment {
    pub fn validate(&self) -> Result<(), NetsimError> {
        let bad = |what: &str| Err(NetsimError::InvalidEnvironment(what.to_string()));
        if !(self.eta >= 1.0) {
            return bad("path-loss exponent must be at least 1");
        }
        if !(self.g0 > 0.0) || !(self.d0 > 0.0) {
            return bad("reference gain and near-field distance must be positive");
        }
        if !(self.noise_mw > 0.0) {
            return bad("noise power must be positive");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.d_max > 0.0) || !(self.dt > 0.0) {
            return bad("transmission range and round duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return bad("message loss probability must lie in [0, 1]");
        }
        Ok(())
    }
}

pub(crate) fn gain_unchecked(a: &Position, b: &Position, env: &ChannelEnvironment) -> f64 {
    let d2 = a.distance_squared(b);
    env.g0 * d2.max(env.d0 * env.d0).powf(-env.eta / 2.0)
}

/// SINR of transmitter `tx` at receiver `rx` given every node's position and
/// power and the set of nodes currently transmitting.
pub fn sinr_from(
    tx: usize,
    rx: usize,
    positions: &[Position],
    powers: &[f64],
    transmitting: &[bool],
    env: &ChannelEnvironment,
) -> Result<f64, NetsimError> {
    let signal = channel_gain(&positions[tx], &positions[rx], env)? * powers[tx];
    let mut interference = 0.0;
    for j in 0..positions.len() {
        if j == tx || j == rx || !transmitting[j] {
            continue;
        }
        interference += gain_unchecked(&positions[j], &positions[rx], env) * powers[j];
    }
    Ok(signal / (env.noise_mw + interference))
}

/// Shannon capacity in bits per second for a given SINR.
pub fn link_capacity(sinr: f64, env: &ChannelEnvironment) -> f64 {
    env.bandwidth_hz * ((1.0 + sinr).ln() / std::f64::consts::LN_2)
}
