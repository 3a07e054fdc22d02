mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use swarmctl_core::ncp::{LayerId, OperatingPoint};
use swarmctl_core::netsim::{
    channel_gain, link_capacity, measure, model_sinr, sinr_from, Arena, ChannelEnvironment, NodeId, NodeSpec,
    Position, Role, Session, SessionId, SimulationState, Topology,
};

fn unit_env() -> ChannelEnvironment {
    ChannelEnvironment { g0: 1.0, eta: 2.0, d0: 1.0, noise_mw: 0.1, ..ChannelEnvironment::default() }
}

fn gain(a: [f64; 3], b: [f64; 3], env: &ChannelEnvironment) -> f64 {
    let d2: f64 = (0..3).map(|i| (a[i] - b[i]).powi(2)).sum();
    env.g0 / d2.max(env.d0 * env.d0).powf(env.eta / 2.0)
}

#[test]
fn sinr_counts_only_transmitting_interferers() {
    let env = unit_env();
    let pos = [Position::new(0.0, 0.0, 0.0), Position::new(1.0, 0.0, 0.0), Position::new(2.0, 0.0, 0.0)];
    let powers = [1.0, 0.0, 1.0];
    let quiet = sinr_from(0, 1, &pos, &powers, &[true, false, false], &env).unwrap();
    assert_relative_eq!(quiet, 10.0, epsilon = 1e-12);
    let loud = sinr_from(0, 1, &pos, &powers, &[true, false, true], &env).unwrap();
    assert_relative_eq!(loud, 1.0 / 1.1, epsilon = 1e-12);
}

#[test]
fn gain_matches_the_path_loss_law() {
    let env = ChannelEnvironment::default();
    let a = Position::new(0.0, 0.0, 2.0);
    for b in [Position::new(0.3, 0.0, 2.0), Position::new(10.0, 4.0, 1.0), Position::new(-25.0, 3.0, 9.0)] {
        let expected = gain(a.to_array(), b.to_array(), &env);
        assert_relative_eq!(channel_gain(&a, &b, &env).unwrap(), expected, max_relative = 1e-14);
    }
    assert!(channel_gain(&a, &a, &env).is_err());
}

#[test]
fn shannon_capacity_values() {
    let env = ChannelEnvironment::default();
    assert_relative_eq!(link_capacity(1.0, &env), 500_000.0, epsilon = 1e-6);
    assert_relative_eq!(link_capacity(3.0, &env), 1_000_000.0, epsilon = 1e-6);
    assert_eq!(link_capacity(0.0, &env), 0.0);
}

fn spec(i: u32, name: &str, at: [f64; 3], role: Role) -> NodeSpec {
    NodeSpec { id: NodeId(i), name: name.into(), start: Position::from_array(at), role, hold: true, v_max: 0.0 }
}

#[test]
fn shared_links_split_their_capacity() {
    let env = unit_env();
    let at = [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    let topo = Topology {
        nodes: vec![
            spec(0, "S", at[0], Role::Source),
            spec(1, "T", at[1], Role::Source),
            spec(2, "R", at[2], Role::Relay),
            spec(3, "D", at[3], Role::Destination),
        ],
        sessions: vec![
            Session { id: SessionId(1), source: NodeId(0), destination: NodeId(3) },
            Session { id: SessionId(2), source: NodeId(1), destination: NodeId(3) },
        ],
        arena: Arena { min: [-5.0; 3], max: [5.0; 3] },
    };
    let d = NodeId(3);
    let op = OperatingPoint {
        positions: at.iter().map(|&p| Position::from_array(p)).collect(),
        powers: vec![50.0, 50.0, 2.0, 0.0],
        next_hops: BTreeMap::from([((NodeId(0), d), NodeId(2)), ((NodeId(1), d), NodeId(2)), ((NodeId(2), d), d)]),
        rates: BTreeMap::from([(SessionId(1), 1e9), (SessionId(2), 1e9)]),
    };
    let m = measure(&topo, &op, &env);
    assert_eq!(m.paths[&SessionId(1)], vec![NodeId(0), NodeId(2), d]);

    let interference = 50.0 * gain(at[0], at[3], &env) + 50.0 * gain(at[1], at[3], &env);
    let sinr_rd = 2.0 * gain(at[2], at[3], &env) / (env.noise_mw + interference);
    assert_relative_eq!(m.sinr[&(NodeId(2), d)], sinr_rd, max_relative = 1e-12);
    let half = env.bandwidth_hz * (1.0 + sinr_rd).log2() / 2.0;
    assert_relative_eq!(m.delivered[&SessionId(1)], half, max_relative = 1e-12);
    assert_relative_eq!(m.delivered[&SessionId(2)], half, max_relative = 1e-12);

    let mut capped = op.clone();
    capped.rates.insert(SessionId(2), 1000.0);
    assert_eq!(measure(&topo, &capped, &env).delivered[&SessionId(2)], 1000.0);

    let mut broken = op;
    broken.next_hops.remove(&(NodeId(2), d));
    let m = measure(&topo, &broken, &env);
    assert!(m.paths.is_empty());
    assert_eq!(m.delivered[&SessionId(1)], 0.0);
    assert!(m.sinr.is_empty());
}

#[test]
fn model_sinr_counts_every_node() {
    let env = unit_env();
    let op = OperatingPoint {
        positions: vec![Position::new(0.0, 0.0, 0.0), Position::new(1.0, 0.0, 0.0), Position::new(2.0, 0.0, 0.0)],
        powers: vec![1.0, 0.0, 1.0],
        next_hops: BTreeMap::new(),
        rates: BTreeMap::new(),
    };
    assert_relative_eq!(model_sinr(NodeId(0), NodeId(1), &op, &env), 1.0 / 1.1, epsilon = 1e-12);
}

fn lossy(seed: u64, loss: f64) -> SimulationState {
    let mut cfg = common::scenario("five_node_min_power.toml");
    cfg.seed = seed;
    cfg.channel.loss = loss;
    common::dispatched(&cfg)
}

fn run(sim: &mut SimulationState, rounds: usize) {
    for _ in 0..rounds {
        sim.step_round();
    }
}

#[test]
fn equal_seeds_replay_exactly() {
    let (mut a, mut b, mut c) = (lossy(7, 0.3), lossy(7, 0.3), lossy(8, 0.3));
    run(&mut a, 60);
    run(&mut b, 60);
    run(&mut c, 60);
    assert_eq!(a.powers(), b.powers());
    assert_eq!(a.measurement, b.measurement);
    assert_ne!(a.powers(), c.powers());
}

#[test]
fn losing_every_message_still_makes_progress() {
    let mut sim = lossy(3, 1.0);
    let start = sim.powers();
    run(&mut sim, 50);
    let end = sim.powers();
    assert_ne!(start, end);
    assert!(end.iter().all(|p| p.is_finite() && (0.0..=1000.0).contains(p)));
}

#[test]
fn two_nodes_settle_at_the_threshold_power() {
    let cfg = common::scenario("two_node.toml");
    let mut sim = common::dispatched(&cfg);
    run(&mut sim, 150);
    let env = &sim.env;
    let g = gain([0.0, 0.0, 2.0], [20.0, 0.0, 2.0], env);
    let target = sim.directive.gamma * env.noise_mw / g;
    assert_relative_eq!(sim.powers()[0], target, max_relative = 0.02);
    assert!(sim.all_converged());
}

#[test]
fn sequential_and_parallel_rounds_agree() {
    let mut a = lossy(5, 0.2);
    let mut b = lossy(5, 0.2);
    b.mode = swarmctl_core::netsim::ExecMode::Sequential;
    run(&mut a, 40);
    run(&mut b, 40);
    assert_eq!(a.powers(), b.powers());
    assert_eq!(a.positions(), b.positions());
}

#[test]
fn failed_dispatch_keeps_the_installed_plans() {
    let cfg = common::scenario("five_node_min_power.toml");
    let mut sim = common::dispatched(&cfg);
    run(&mut sim, 5);
    let before: Vec<_> = sim.nodes.iter().map(|n| n.decision.as_ref().unwrap().plan.clone()).collect();
    sim.directive.layers.insert(LayerId::Mac);
    let opts = cfg.emit_options(swarmctl_core::harness::Scheme::Swarm).unwrap();
    assert!(sim.dispatch(Some(&opts), cfg.decision_config()).is_err());
    let after: Vec<_> = sim.nodes.iter().map(|n| n.decision.as_ref().unwrap().plan.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn terminating_a_session_drops_its_route() {
    let cfg = common::scenario("scenario1_two_sessions.toml");
    let mut sim = common::dispatched(&cfg);
    run(&mut sim, 3);
    let s = sim.topology.sessions[0].id;
    sim.terminate_session(s).unwrap();
    assert!(!sim.measurement.delivered.contains_key(&s));
    assert!(sim.terminate_session(s).is_err());
    let opts = cfg.emit_options(swarmctl_core::harness::Scheme::Swarm).unwrap();
    sim.dispatch(Some(&opts), cfg.decision_config()).unwrap();
    run(&mut sim, 3);
}
