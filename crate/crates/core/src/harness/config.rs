//! Scenario configuration files.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codegen::EmitOptions;
use crate::decompose::StepSchedule;
use crate::ncp::{DefaultBounds, Directive, LayerId, ObjectiveTemplate};
use crate::netsim::{Arena, ChannelEnvironment, NodeId, NodeSpec, Position, Role, Session, SessionId, Topology};
use crate::pps::DecisionConfig;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Coordinated cross-layer control.
    Swarm,
    /// Every node optimizes its own share with no penalties.
    Br,
    /// Nothing is optimized.
    Nc,
}

impl Scheme {
    pub fn id(self) -> &'static str {
        match self {
            Scheme::Swarm => "swarm",
            Scheme::Br => "br",
            Scheme::Nc => "nc",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "swarm" => Some(Scheme::Swarm),
            "br" => Some(Scheme::Br),
            "nc" => Some(Scheme::Nc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    pub position: [f64; 3],
    pub role: Role,
    #[serde(default)]
    pub hold: bool,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_max() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub id: u32,
    pub source: String,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectiveConfig {
    pub objective: ObjectiveTemplate,
    pub layers: Vec<LayerId>,
    /// Linear SINR threshold; `gamma_db` is accepted instead.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub gamma_db: Option<f64>,
    #[serde(default = "default_power")]
    pub power_mw: [f64; 2],
    /// Defaults to `[1000, 10·B]`.
    #[serde(default)]
    pub rate_bps: Option<[f64; 2]>,
}

fn default_power() -> [f64; 2] {
    [0.0, 1000.0]
}

impl DirectiveConfig {
    pub fn to_directive(&self, bandwidth: f64) -> Result<Directive, HarnessError> {
        let gamma = match (self.gamma, self.gamma_db) {
            (Some(g), None) => g,
            (None, Some(db)) => 10f64.powf(db / 10.0),
            _ => return Err(HarnessError::Config("give exactly one of gamma and gamma_db".into())),
        };
        let rate = self.rate_bps.unwrap_or([1e3, 10.0 * bandwidth]);
        Ok(Directive {
            objective: self.objective,
            layers: self.layers.iter().copied().collect::<BTreeSet<_>>(),
            roles: BTreeMap::new(),
            gamma,
            bounds: DefaultBounds { power_mw: (self.power_mw[0], self.power_mw[1]), rate_bps: (rate[0], rate[1]) },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default)]
    pub constant_step: bool,
    #[serde(default = "default_relinearize")]
    pub relinearize: u32,
    #[serde(default = "default_proximal")]
    pub proximal: f64,
    #[serde(default = "default_staleness")]
    pub staleness: u64,
}

fn default_alpha0() -> f64 {
    0.5
}
fn default_relinearize() -> u32 {
    5
}
fn default_proximal() -> f64 {
    0.25
}
fn default_staleness() -> u64 {
    3
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            alpha0: default_alpha0(),
            constant_step: false,
            relinearize: default_relinearize(),
            proximal: default_proximal(),
            staleness: default_staleness(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    /// Removes a session at the start of `round`.
    TerminateSession { round: u64, session: u32 },
    /// Installs a new directive at the start of `round`.
    Switch { round: u64, directive: DirectiveConfig },
}

impl EventConfig {
    pub fn round(&self) -> u64 {
        match self {
            EventConfig::TerminateSession { round, .. } | EventConfig::Switch { round, .. } => *round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Per-seed perturbation of start positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterConfig {
    /// Maximum per-axis offset in meters (uniform), applied to x and y.
    pub xy_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub rounds: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    pub directive: DirectiveConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    pub arena: ArenaConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub sessions: Vec<SessionConfig>,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub jitter: Option<JitterConfig>,
}

fn default_scheme() -> Scheme {
    Scheme::Swarm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub g0: f64,
    pub eta: f64,
    pub d0: f64,
    pub noise_mw: f64,
    pub bandwidth_hz: f64,
    pub d_max: f64,
    pub loss: f64,
    pub dt: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let e = ChannelEnvironment::default();
        Self {
            g0: e.g0,
            eta: e.eta,
            d0: e.d0,
            noise_mw: e.noise_mw,
            bandwidth_hz: e.bandwidth_hz,
            d_max: e.d_max,
            loss: e.loss,
            dt: e.dt,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        for e in &self.events {
            if e.round() == 0 || e.round() >= self.rounds {
                return bad(format!("event round {} outside 1..{}", e.round(), self.rounds));
            }
        }
        self.topology(self.seed)?;
        self.directive.to_directive(self.channel.bandwidth_hz)?;
        Ok(())
    }

    pub fn env(&self, seed: u64) -> ChannelEnvironment {
        let c = &self.channel;
        ChannelEnvironment {
            g0: c.g0,
            eta: c.eta,
            d0: c.d0,
            noise_mw: c.noise_mw,
            bandwidth_hz: c.bandwidth_hz,
            d_max: c.d_max,
            loss: c.loss,
            dt: c.dt,
            seed,
        }
    }

    /// Topology for `seed`, with start positions jittered when configured.
    pub fn topology(&self, seed: u64) -> Result<Topology, HarnessError> {
        use rand::{Rng, SeedableRng};
        let arena = Arena { min: self.arena.min, max: self.arena.max };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9051_7105);
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let mut p = n.position;
            if let Some(j) = &self.jitter {
                if !n.hold && j.xy_m > 0.0 {
                    for v in p.iter_mut().take(2) {
                        *v += rng.gen_range(-j.xy_m..=j.xy_m);
                    }
                }
            }
            let start = arena.clamp(Position::new(p[0], p[1], p[2]));
            nodes.push(NodeSpec { id: NodeId(i as u32), name: n.name.clone(), start, role: n.role, hold: n.hold, v_max: n.v_max });
        }
        let find = |name: &str| {
            self.nodes
                .iter()
                .position(|n| n.name == name)
                .map(|i| NodeId(i as u32))
                .ok_or_else(|| HarnessError::Config(format!("unknown node `{name}`")))
        };
        let mut sessions = Vec::new();
        for s in &self.sessions {
            sessions.push(Session { id: SessionId(s.id), source: find(&s.source)?, destination: find(&s.destination)? });
        }
        let topo = Topology { nodes, sessions, arena };
        topo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(topo)
    }

    pub fn emit_options(&self, scheme: Scheme) -> Option<EmitOptions> {
        let a = &self.algorithm;
        let schedule = if a.constant_step { StepSchedule::Constant(a.alpha0) } else { StepSchedule::Diminishing(a.alpha0) };
        match scheme {
            Scheme::Nc => None,
            Scheme::Swarm | Scheme::Br => Some(EmitOptions {
                schedule,
                relinearize: a.relinearize,
                proximal: a.proximal,
                coordinated: scheme == Scheme::Swarm,
            }),
        }
    }

    pub fn decision_config(&self) -> DecisionConfig {
        DecisionConfig { staleness: self.algorithm.staleness, ..DecisionConfig::default() }
    }
}
