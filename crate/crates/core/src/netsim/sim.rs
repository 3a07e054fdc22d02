//! Round-based execution of the per-node stacks over the shared channel.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codegen::{emit_template, instantiate, EmitOptions, NetworkView};
use crate::ncp::{
    construct_ncp, effective_topology, value_name, Directive, LayerId, OperatingPoint, RoleAnnotation, VarKind,
};
use crate::pps::{data_plane_apply, keys, DecisionConfig, DecisionState, LutValue, NeighborMessage, RegisterPlane};

use super::channel::{link_capacity, sinr_from, ChannelEnvironment, Position};
use super::topology::{NodeId, SessionId, Topology};
use super::NetsimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Decision steps of all nodes run on the rayon pool.
    #[default]
    Parallel,
    Sequential,
}

/// One node: its registers and, once a template has been dispatched, its
/// decision state.
#[derive(Debug, Clone)]
pub struct NodeStack {
    pub id: NodeId,
    pub registers: RegisterPlane,
    pub decision: Option<DecisionState>,
    inbox: Vec<NeighborMessage>,
}

impl NodeStack {
    fn decide(&mut self, round: u64) {
        let Some(d) = self.decision.as_mut() else {
            self.inbox.clear();
            return;
        };
        for m in self.inbox.drain(..) {
            d.receive(&m);
        }
        d.step(&mut self.registers, round);
    }
}

/// Channel and traffic measurements after a round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Measurement {
    /// Node sequence of each session with a complete route.
    pub paths: BTreeMap<SessionId, Vec<NodeId>>,
    /// Delivered rate per session in bit/s.
    pub delivered: BTreeMap<SessionId, f64>,
    /// SINR per active (tx, rx) hop.
    pub sinr: BTreeMap<(NodeId, NodeId), f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub topology: Topology,
    pub env: ChannelEnvironment,
    pub directive: Directive,
    pub nodes: Vec<NodeStack>,
    pub round: u64,
    pub mode: ExecMode,
    pub measurement: Measurement,
    /// Delivered bits per session since the start.
    pub delivered_bits: BTreeMap<SessionId, f64>,
    outbox: Vec<NeighborMessage>,
    rng: ChaCha8Rng,
}

fn set_position(rp: &mut RegisterPlane, p: Position) {
    rp.l_mut(LayerId::Motion).set(keys::POSITION, LutValue::Vector(p.to_array().to_vec()));
}

impl SimulationState {
    /// Nodes start at their initial operating point with no plan installed.
    pub fn new(topology: &Topology, env: &ChannelEnvironment, directive: &Directive) -> Result<Self, NetsimError> {
        topology.validate()?;
        env.validate()?;
        let eff = effective_topology(directive, topology).map_err(|e| NetsimError::InvalidTopology(e.to_string()))?;
        let op = OperatingPoint::initial(&eff, directive, env).map_err(|e| NetsimError::InvalidTopology(e.to_string()))?;
        let mut nodes = Vec::new();
        for n in &eff.nodes {
            let mut rp = RegisterPlane::default();
            set_position(&mut rp, op.positions[n.id.index()]);
            let l0 = rp.l_mut(LayerId::Motion);
            l0.set_real(keys::HOLD, if n.hold { 1.0 } else { 0.0 });
            l0.set_real(keys::V_MAX, n.v_max);
            l0.set_real(keys::DT, env.dt);
            let l1 = rp.l_mut(LayerId::Physical);
            l1.set_real(keys::TX_POWER, op.powers[n.id.index()]);
            l1.set_real(keys::POWER_LO, directive.bounds.power_mw.0);
            l1.set_real(keys::POWER_HI, directive.bounds.power_mw.1);
            l1.set_real(keys::MIN_SNR, directive.gamma);
            l1.set_real(keys::NOISE, env.noise_mw);
            l1.set_real(keys::BANDWIDTH, env.bandwidth_hz);
            l1.set_real(keys::G0, env.g0);
            l1.set_real(keys::ETA, env.eta);
            l1.set_real(keys::D0, env.d0);
            for ((node, dest), hop) in &op.next_hops {
                if *node == n.id {
                    rp.l_mut(LayerId::Network).set(keys::next_hop(eff.name(*dest)), LutValue::Nodes(vec![*hop]));
                }
            }
            for s in eff.sessions.iter().filter(|s| s.source == n.id) {
                rp.l_mut(LayerId::Transport).set_real(keys::rate(s.id.0), op.rates[&s.id]);
            }
            nodes.push(NodeStack { id: n.id, registers: rp, decision: None, inbox: Vec::new() });
        }
        let mut sim = Self {
            topology: eff,
            env: env.clone(),
            directive: directive.clone(),
            nodes,
            round: 0,
            mode: ExecMode::default(),
            measurement: Measurement::default(),
            delivered_bits: BTreeMap::new(),
            outbox: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(env.seed),
        };
        sim.refresh();
        Ok(sim)
    }

    pub fn positions(&self) -> Vec<Position> {
        self.nodes
            .iter()
            .map(|n| n.registers.position().map(Position::from_array).unwrap_or(self.topology.nodes[n.id.index()].start))
            .collect()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.registers.l(LayerId::Physical).real(keys::TX_POWER).unwrap_or(0.0)).collect()
    }

    pub fn next_hop(&self, node: NodeId, dest: NodeId) -> Option<NodeId> {
        match self.nodes[node.index()].registers.l(LayerId::Network).get(&keys::next_hop(self.topology.name(dest))) {
            Some(LutValue::Nodes(v)) => v.first().copied(),
            _ => None,
        }
    }

    pub fn rate(&self, s: SessionId) -> f64 {
        let Some(sess) = self.topology.session(s) else { return 0.0 };
        self.nodes[sess.source.index()].registers.l(LayerId::Transport).real(&keys::rate(s.0)).unwrap_or(0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.powers().iter().sum()
    }

    /// Current state as an operating point.
    pub fn operating_point(&self) -> OperatingPoint {
        let mut next_hops = BTreeMap::new();
        for n in &self.topology.nodes {
            for d in self.topology.destinations() {
                if let Some(h) = self.next_hop(n.id, d) {
                    next_hops.insert((n.id, d), h);
                }
            }
        }
        let rates = self.topology.sessions.iter().map(|s| (s.id, self.rate(s.id))).collect();
        OperatingPoint { positions: self.positions(), powers: self.powers(), next_hops, rates }
    }

    /// Builds the problem around the current state, emits the template and
    /// installs a per-node plan on every node. `None` options leave the
    /// nodes without a decision plane.
    pub fn dispatch(&mut self, opts: Option<&EmitOptions>, cfg: DecisionConfig) -> Result<(), NetsimError> {
        let fail = |e: String| NetsimError::Dispatch(e);
        let Some(opts) = opts else {
            for n in &mut self.nodes {
                n.decision = None;
            }
            self.outbox.clear();
            return Ok(());
        };
        let op = self.operating_point();
        let p = construct_ncp(&self.directive, &self.topology, &self.env, &op).map_err(|e| fail(e.to_string()))?;
        let template = emit_template(&p, opts).map_err(|e| fail(e.to_string()))?;
        let view = Arc::new(NetworkView::from_ncp(&p));
        let carrying = op.carrying(&self.topology);
        let mut point = BTreeMap::new();
        for n in &self.topology.nodes {
            let mut kinds = vec![VarKind::TxPower, VarKind::Position(0), VarKind::Position(1), VarKind::Position(2)];
            for g in view.groups.iter().filter(|g| g.node == n.id) {
                for &h in &g.candidates {
                    kinds.push(VarKind::RouteIndicator { next_hop: h, destination: g.destination });
                }
            }
            for s in self.topology.sessions.iter().filter(|s| s.source == n.id) {
                kinds.push(VarKind::SessionRate(s.id));
            }
            for k in kinds {
                point.insert(value_name(&self.topology, n.id, &k), op.value(n.id, &k, &carrying));
            }
        }
        let mut plans = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let spec = &self.topology.nodes[n.id.index()];
            let annotation = RoleAnnotation { role: spec.role, hold: spec.hold.then_some(spec.start) };
            let mut rp = n.registers.clone();
            rp.l_mut(LayerId::Network).set(keys::VIEW, LutValue::View(view.clone()));
            plans.push(instantiate(&template, annotation, n.id, &rp).map_err(|e| fail(e.to_string()))?);
        }
        let round = self.round + 1;
        for (n, plan) in self.nodes.iter_mut().zip(plans) {
            n.registers.l_mut(LayerId::Network).set(keys::VIEW, LutValue::View(view.clone()));
            n.decision = Some(DecisionState::install(plan, &point, round, cfg));
            n.inbox.clear();
        }
        self.outbox.clear();
        Ok(())
    }

    /// Removes a session. Callers re-dispatch afterwards.
    pub fn terminate_session(&mut self, s: SessionId) -> Result<(), NetsimError> {
        let before = self.topology.sessions.len();
        self.topology.sessions.retain(|x| x.id != s);
        if self.topology.sessions.len() == before {
            return Err(NetsimError::InvalidTopology(format!("no session {s}")));
        }
        self.refresh();
        Ok(())
    }

    fn deliver(&mut self) {
        let mut outbox = std::mem::take(&mut self.outbox);
        outbox.sort_by_key(|m| m.sender);
        let loss = self.env.loss;
        for m in outbox {
            for r in 0..self.nodes.len() {
                if r == m.sender.index() {
                    continue;
                }
                let dropped = self.rng.gen::<f64>() < loss;
                if !dropped {
                    self.nodes[r].inbox.push(m.clone());
                }
            }
        }
    }

    /// One synchronous round: message delivery, decisions, actuation,
    /// measurement and the next round's messages.
    pub fn step_round(&mut self) {
        self.round += 1;
        let round = self.round;
        self.deliver();
        match self.mode {
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => {
                use rayon::prelude::*;
                self.nodes.par_iter_mut().for_each(|n| n.decide(round));
            }
            _ => self.nodes.iter_mut().for_each(|n| n.decide(round)),
        }
        for n in &mut self.nodes {
            if n.decision.is_some() {
                data_plane_apply(&mut n.registers);
            }
        }
        self.refresh();
        for (s, r) in &self.measurement.delivered {
            *self.delivered_bits.entry(*s).or_insert(0.0) += r * self.env.dt;
        }
        self.outbox = self
            .nodes
            .iter()
            .filter_map(|n| n.decision.as_ref().and_then(|d| d.outgoing(&n.registers, round)))
            .collect();
    }

    /// Recomputes forwarding flags and channel measurements from the
    /// registers.
    fn refresh(&mut self) {
        let op = self.operating_point();
        let carrying = op.carrying(&self.topology);
        let dests = self.topology.destinations();
        for n in &mut self.nodes {
            let l3 = n.registers.l_mut(LayerId::Network);
            for &d in &dests {
                let name = self.topology.nodes[d.index()].name.clone();
                let flag = if carrying.contains(&(n.id, d)) { 1.0 } else { 0.0 };
                l3.set_real(keys::forwarding(&name), flag);
            }
        }
        self.measurement = measure(&self.topology, &op, &self.env);
        let positions = &op.positions;
        for n in &mut self.nodes {
            let me = n.id;
            let mut neighbors = Vec::new();
            for other in &self.topology.nodes {
                if other.id == me {
                    continue;
                }
                let d = positions[me.index()].distance(&positions[other.id.index()]);
                n.registers.l_mut(LayerId::Network).set_real(keys::distance(&other.name), d);
                if d <= self.env.d_max {
                    neighbors.push(other.id);
                }
            }
            n.registers.l_mut(LayerId::Network).set(keys::NEIGHBORS, LutValue::Nodes(neighbors));
        }
        for (sid, path) in &self.measurement.paths {
            let Some(sess) = self.topology.session(*sid) else { continue };
            let dest = self.topology.name(sess.destination).to_string();
            for w in path.windows(2) {
                let s = self.measurement.sinr[&(w[0], w[1])];
                let rx = self.topology.name(w[1]).to_string();
                let l1 = self.nodes[w[0].index()].registers.l_mut(LayerId::Physical);
                l1.set_real(keys::sinr(&rx, &dest), s);
                l1.set_real(keys::capacity(&rx, &dest), link_capacity(s, &self.env));
            }
        }
    }

    pub fn lambda_max(&self, node: NodeId) -> f64 {
        self.nodes[node.index()].decision.as_ref().map_or(0.0, |d| {
            d.plan.tracked.iter().filter(|t| t.tag.owner() == node).map(|t| d.lambda(&t.tag)).fold(0.0, f64::max)
        })
    }

    pub fn converged(&self, node: NodeId) -> bool {
        self.nodes[node.index()].decision.as_ref().is_some_and(|d| d.converged)
    }

    pub fn all_converged(&self) -> bool {
        self.nodes.iter().all(|n| n.decision.as_ref().is_some_and(|d| d.converged))
    }
}

/// Routes, SINR and delivered rates for an operating point. Only nodes on a
/// complete route transmit; a link's capacity is split equally among the
/// sessions crossing it.
pub fn measure(topo: &Topology, op: &OperatingPoint, env: &ChannelEnvironment) -> Measurement {
    let mut paths = BTreeMap::new();
    for s in &topo.sessions {
        let mut path = vec![s.source];
        let mut seen = BTreeSet::from([s.source]);
        let mut cur = s.source;
        let mut ok = false;
        while let Some(&h) = op.next_hops.get(&(cur, s.destination)) {
            path.push(h);
            if h == s.destination {
                ok = true;
                break;
            }
            if !seen.insert(h) {
                break;
            }
            cur = h;
        }
        if ok {
            paths.insert(s.id, path);
        }
    }
    let mut transmitting = vec![false; topo.nodes.len()];
    let mut share: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for p in paths.values() {
        for w in p.windows(2) {
            transmitting[w[0].index()] = true;
            *share.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    let mut sinr = BTreeMap::new();
    for &(tx, rx) in share.keys() {
        let v = sinr_from(tx.index(), rx.index(), &op.positions, &op.powers, &transmitting, env);
        sinr.insert((tx, rx), v.unwrap_or(f64::INFINITY));
    }
    let mut delivered = BTreeMap::new();
    for s in &topo.sessions {
        let r = match paths.get(&s.id) {
            Some(p) => {
                let mut r = op.rates.get(&s.id).copied().unwrap_or(0.0);
                for w in p.windows(2) {
                    let cap = link_capacity(sinr[&(w[0], w[1])], env) / share[&(w[0], w[1])] as f64;
                    r = r.min(cap);
                }
                r
            }
            None => 0.0,
        };
        delivered.insert(s.id, r);
    }
    Measurement { paths, delivered, sinr }
}

/// SINR of `tx → rx` with every other node interfering at its current
/// power, as in the problem constraints.
pub fn model_sinr(tx: NodeId, rx: NodeId, op: &OperatingPoint, env: &ChannelEnvironment) -> f64 {
    let on = vec![true; op.positions.len()];
    sinr_from(tx.index(), rx.index(), &op.positions, &op.powers, &on, env).unwrap_or(f64::INFINITY)
}
