#![allow(dead_code)]

pub mod gen;

use std::path::PathBuf;

use swarmctl_core::codegen::{emit_template, EmitOptions, ExecutablePlan, TemplateScript};
use swarmctl_core::harness::{ScenarioConfig, Scheme};
use swarmctl_core::ncp::{construct_ncp, Directive, NetworkControlProblem, OperatingPoint};
use swarmctl_core::netsim::{ChannelEnvironment, SimulationState, Topology};

pub fn scenario_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file)
}

pub fn scenario(file: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(file)).expect("scenario loads")
}

/// The five-node instance with relays C and D free to move.
pub fn five_node_mobile() -> ScenarioConfig {
    let text = std::fs::read_to_string(scenario_path("five_node_min_power.toml")).unwrap();
    let text = text.replace("layers = [\"physical\", \"network\"]", "layers = [\"motion\", \"physical\", \"network\"]");
    let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
    for n in cfg.nodes.iter_mut().filter(|n| n.name == "C" || n.name == "D") {
        n.hold = false;
    }
    cfg.validate().unwrap();
    cfg
}

pub struct Built {
    pub topo: Topology,
    pub directive: Directive,
    pub env: ChannelEnvironment,
    pub op: OperatingPoint,
    pub ncp: NetworkControlProblem,
}

pub fn build(cfg: &ScenarioConfig) -> Built {
    let topo = cfg.topology(cfg.seed).unwrap();
    let env = cfg.env(cfg.seed);
    let directive = cfg.directive.to_directive(env.bandwidth_hz).unwrap();
    let op = OperatingPoint::initial(&topo, &directive, &env).unwrap();
    let ncp = construct_ncp(&directive, &topo, &env, &op).unwrap();
    Built { topo, directive, env, op, ncp }
}

pub fn template(cfg: &ScenarioConfig) -> TemplateScript {
    emit_template(&build(cfg).ncp, &cfg.emit_options(Scheme::Swarm).unwrap()).unwrap()
}

/// Simulator with the coordinated plan dispatched.
pub fn dispatched(cfg: &ScenarioConfig) -> SimulationState {
    let b = build(cfg);
    let mut sim = SimulationState::new(&b.topo, &b.env, &b.directive).unwrap();
    let opts: EmitOptions = cfg.emit_options(Scheme::Swarm).unwrap();
    sim.dispatch(Some(&opts), cfg.decision_config()).unwrap();
    sim
}

pub fn plan<'a>(sim: &'a SimulationState, name: &str) -> &'a ExecutablePlan {
    let id = sim.topology.find(name).unwrap();
    &sim.nodes[id.index()].decision.as_ref().unwrap().plan
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmctl_core::ncp::{DefaultBounds, LayerId, ObjectiveTemplate};
use swarmctl_core::netsim::{Arena, NodeId, NodeSpec, Position, Role, Session, SessionId};

/// A random source, two relays and a destination with every layer
/// optimized, together with a random operating point.
pub fn random_instance(seed: u64, objective: ObjectiveTemplate) -> Built {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at = |x: f64| Position::new(x + rng.gen_range(-3.0..3.0), rng.gen_range(-8.0..8.0), rng.gen_range(2.0..8.0));
    let starts = [at(0.0), at(15.0), at(17.0), at(32.0)];
    let spec = |i: u32, name: &str, role: Role, hold: bool| NodeSpec {
        id: NodeId(i),
        name: name.into(),
        start: starts[i as usize],
        role,
        hold,
        v_max: 2.0,
    };
    let topo = Topology {
        nodes: vec![
            spec(0, "S", Role::Source, true),
            spec(1, "R", Role::Relay, false),
            spec(2, "Q", Role::Relay, false),
            spec(3, "D", Role::Destination, true),
        ],
        sessions: vec![Session { id: SessionId(1), source: NodeId(0), destination: NodeId(3) }],
        arena: Arena { min: [-10.0, -20.0, 0.0], max: [50.0, 20.0, 12.0] },
    };
    let directive = Directive {
        objective,
        layers: [LayerId::Motion, LayerId::Physical, LayerId::Network, LayerId::Transport].into(),
        roles: BTreeMap::new(),
        gamma: 0.5,
        bounds: DefaultBounds { power_mw: (0.0, 1000.0), rate_bps: (1e3, 5e6) },
    };
    let env = ChannelEnvironment { d_max: 40.0, seed, ..ChannelEnvironment::default() };
    let mut op = OperatingPoint::initial(&topo, &directive, &env).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    for p in op.powers.iter_mut().take(3) {
        *p = rng.gen_range(1.0..1000.0);
    }
    let ncp = construct_ncp(&directive, &topo, &env, &op).unwrap();
    Built { topo, directive, env, op, ncp }
}
