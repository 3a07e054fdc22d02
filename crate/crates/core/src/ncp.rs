//! Construction of the centralized Network Control Problem.
//!
//! Variables are registered per (node, layer). Layers left out of a
//! directive, hold-mode positions and single-candidate route indicators are
//! registered as parameters frozen at the current operating point instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Binding, Expression, ParamId, Symbol, SymbolNames, VarId};
use crate::netsim::{channel_gain, ChannelEnvironment, NodeId, Position, Role, SessionId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerId {
    Motion,
    Physical,
    Mac,
    Network,
    Transport,
}

impl LayerId {
    pub fn index(self) -> usize {
        match self {
            LayerId::Motion => 0,
            LayerId::Physical => 1,
            LayerId::Mac => 2,
            LayerId::Network => 3,
            LayerId::Transport => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveTemplate {
    MinPower,
    MaxLogRate,
}

impl ObjectiveTemplate {
    pub fn id(self) -> &'static str {
        match self {
            ObjectiveTemplate::MinPower => "min_power",
            ObjectiveTemplate::MaxLogRate => "max_log_rate",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "min_power" => Some(ObjectiveTemplate::MinPower),
            "max_log_rate" => Some(ObjectiveTemplate::MaxLogRate),
            _ => None,
        }
    }
}

/// Directed candidate link `tx → rx` carrying traffic bound for `dest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub tx: NodeId,
    pub rx: NodeId,
    pub dest: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintTag {
    /// SINR requirement on a candidate link.
    Sinr(Link),
    /// Link capacity must cover the session rate when the link is active.
    Capacity(SessionId, Link),
}

impl ConstraintTag {
    pub fn link(&self) -> Link {
        match self {
            ConstraintTag::Sinr(l) | ConstraintTag::Capacity(_, l) => *l,
        }
    }

    /// Multipliers are kept by the receiving end of the link.
    pub fn owner(&self) -> NodeId {
        self.link().rx
    }

    pub fn label(&self, topo: &Topology) -> String {
        let l = self.link();
        let (t, r, d) = (topo.name(l.tx), topo.name(l.rx), topo.name(l.dest));
        match self {
            ConstraintTag::Sinr(_) => format!("sinr_{t}_{r}_{d}"),
            ConstraintTag::Capacity(s, _) => format!("cap_{s}_{t}_{r}_{d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    TxPower,
    /// One axis (0 = x, 1 = y, 2 = z) of the node position.
    Position(usize),
    RouteIndicator { next_hop: NodeId, destination: NodeId },
    SessionRate(SessionId),
}

impl VarKind {
    pub fn layer(&self) -> LayerId {
        match self {
            VarKind::TxPower => LayerId::Physical,
            VarKind::Position(_) => LayerId::Motion,
            VarKind::RouteIndicator { .. } => LayerId::Network,
            VarKind::SessionRate(_) => LayerId::Transport,
        }
    }
}

pub const AXES: [&str; 3] = ["x", "y", "z"];

/// Canonical name of a network quantity, shared by variables, frozen
/// parameters, LUT keys and message payloads.
pub fn value_name(topo: &Topology, owner: NodeId, kind: &VarKind) -> String {
    let n = topo.name(owner);
    match kind {
        VarKind::TxPower => format!("p_{n}"),
        VarKind::Position(a) => format!("pos_{n}_{}", AXES[*a]),
        VarKind::RouteIndicator { next_hop, destination } => {
            format!("x_{n}_{}_{}", topo.name(*next_hop), topo.name(*destination))
        }
        VarKind::SessionRate(s) => format!("r_{s}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableDecl {
    pub id: VarId,
    pub name: String,
    pub owner: NodeId,
    pub layer: LayerId,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    MinSnr,
    Noise,
    Bandwidth,
    /// Channel gain between two frozen positions.
    Gain { from: NodeId, to: NodeId },
    /// A demoted variable frozen at its current value.
    Frozen { owner: NodeId, kind: VarKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub id: ParamId,
    pub name: String,
    pub kind: ParamKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub tag: ConstraintTag,
    /// Satisfied when the expression is nonnegative.
    pub expr: Expression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerm {
    /// Node whose variables the term depends on; `None` for constant terms.
    pub owner: Option<NodeId>,
    pub expr: Expression,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteGroup {
    pub node: NodeId,
    pub destination: NodeId,
    pub candidates: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultBounds {
    pub power_mw: (f64, f64),
    pub rate_bps: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleAnnotation {
    pub role: Role,
    /// Present for hold-mode nodes.
    pub hold: Option<Position>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub objective: ObjectiveTemplate,
    pub layers: BTreeSet<LayerId>,
    /// Overrides of the topology's roles; nodes not listed keep theirs.
    pub roles: BTreeMap<NodeId, RoleAnnotation>,
    /// Linear SINR threshold.
    pub gamma: f64,
    pub bounds: DefaultBounds,
}

impl Directive {
    pub fn optimizes(&self, layer: LayerId) -> bool {
        self.layers.contains(&layer)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NcpError {
    #[error("inconsistent directive: {0}")]
    InconsistentDirective(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no candidate link from node {0} to node {1}")]
    UnknownPair(NodeId, NodeId),
    #[error("nodes {0} and {1} occupy the same position")]
    CoincidentPositions(NodeId, NodeId),
}

/// Network state the problem is built around: current values of every
/// quantity that may be optimized or frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub positions: Vec<Position>,
    pub powers: Vec<f64>,
    /// Chosen next hop per (node, destination).
    pub next_hops: BTreeMap<(NodeId, NodeId), NodeId>,
    pub rates: BTreeMap<SessionId, f64>,
}

impl OperatingPoint {
    /// Start positions, mid-box powers (zero for pure destinations), rates at
    /// ten times the lower bound and the lowest-id candidate as next hop.
    pub fn initial(topo: &Topology, d: &Directive, env: &ChannelEnvironment) -> Result<Self, NcpError> {
        let eff = effective_topology(d, topo)?;
        let positions: Vec<Position> = eff.nodes.iter().map(|n| n.start).collect();
        let (plo, phi) = d.bounds.power_mw;
        let powers = eff
            .nodes
            .iter()
            .map(|n| if n.role == Role::Destination { 0.0 } else { 0.5 * (plo + phi) })
            .collect();
        let mut next_hops = BTreeMap::new();
        for g in route_groups(&eff, &positions, env) {
            next_hops.insert((g.node, g.destination), g.candidates[0]);
        }
        let (rlo, rhi) = d.bounds.rate_bps;
        let rates = eff.sessions.iter().map(|s| (s.id, (rlo * 10.0).min(rhi))).collect();
        Ok(Self { positions, powers, next_hops, rates })
    }

    /// (node, destination) pairs that currently forward some session's traffic.
    pub fn carrying(&self, topo: &Topology) -> BTreeSet<(NodeId, NodeId)> {
        let mut out = BTreeSet::new();
        for s in &topo.sessions {
            let mut cur = s.source;
            let mut seen = BTreeSet::new();
            while cur != s.destination && seen.insert(cur) {
                match self.next_hops.get(&(cur, s.destination)) {
                    Some(&h) => {
                        out.insert((cur, s.destination));
                        cur = h;
                    }
                    None => break,
                }
            }
        }
        out
    }

    /// Current value of a network quantity.
    pub fn value(&self, owner: NodeId, kind: &VarKind, carrying: &BTreeSet<(NodeId, NodeId)>) -> f64 {
        match kind {
            VarKind::TxPower => self.powers[owner.index()],
            VarKind::Position(a) => self.positions[owner.index()].axis(*a),
            VarKind::RouteIndicator { next_hop, destination } => {
                let chosen = self.next_hops.get(&(owner, *destination)) == Some(next_hop);
                if chosen && carrying.contains(&(owner, *destination)) {
                    1.0
                } else {
                    0.0
                }
            }
            VarKind::SessionRate(s) => self.rates.get(s).copied().unwrap_or(0.0),
        }
    }
}

/// Topology with the directive's role annotations applied.
pub fn effective_topology(d: &Directive, topo: &Topology) -> Result<Topology, NcpError> {
    let mut eff = topo.clone();
    for (id, ann) in &d.roles {
        let n = eff.nodes.get_mut(id.index()).ok_or(NcpError::UnknownNode(*id))?;
        n.role = ann.role;
        if let Some(p) = ann.hold {
            n.hold = true;
            n.start = p;
        }
    }
    eff.validate().map_err(|e| NcpError::InconsistentDirective(e.to_string()))?;
    Ok(eff)
}

/// Next hops available to `node` for traffic bound to `dest`: relays (or the
/// destination itself) within range that are strictly closer to `dest`.
pub fn candidate_hops(
    topo: &Topology,
    positions: &[Position],
    env: &ChannelEnvironment,
    node: NodeId,
    dest: NodeId,
) -> Vec<NodeId> {
    if node == dest {
        return Vec::new();
    }
    let here = positions[node.index()];
    let target = positions[dest.index()];
    let remaining = here.distance(&target);
    topo.nodes
        .iter()
        .filter(|h| h.id != node && (h.role == Role::Relay || h.id == dest))
        .filter(|h| {
            let p = positions[h.id.index()];
            here.distance(&p) <= env.d_max && p.distance(&target) < remaining
        })
        .map(|h| h.id)
        .collect()
}

/// (session, link) pairs that get a capacity constraint: links toward the
/// session's destination leaving its source or a relay.
pub fn capacity_pairs(topo: &Topology, links: &[Link]) -> Vec<(SessionId, Link)> {
    let mut out = Vec::new();
    for s in &topo.sessions {
        for l in links {
            if l.dest == s.destination && (l.tx == s.source || topo.nodes[l.tx.index()].role == Role::Relay) {
                out.push((s.id, *l));
            }
        }
    }
    out
}

/// Route-choice groups: each source for its own session's destination and
/// each relay for every destination, keeping those with a candidate.
pub fn route_groups(topo: &Topology, positions: &[Position], env: &ChannelEnvironment) -> Vec<RouteGroup> {
    let mut groups = Vec::new();
    for dest in topo.destinations() {
        for n in &topo.nodes {
            let forwards = match n.role {
                Role::Source => topo.sessions.iter().any(|s| s.source == n.id && s.destination == dest),
                Role::Relay => true,
                Role::Destination => false,
            };
            if !forwards {
                continue;
            }
            let candidates = candidate_hops(topo, positions, env, n.id, dest);
            if !candidates.is_empty() {
                groups.push(RouteGroup { node: n.id, destination: dest, candidates });
            }
        }
    }
    groups.sort_by_key(|g| (g.node, g.destination));
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkControlProblem {
    pub template: ObjectiveTemplate,
    pub layers: BTreeSet<LayerId>,
    pub gamma: f64,
    pub bounds: DefaultBounds,
    pub objective: Expression,
    pub objective_terms: Vec<ObjectiveTerm>,
    pub constraints: Vec<Constraint>,
    pub vars: Vec<VariableDecl>,
    pub params: Vec<ParamDecl>,
    pub route_groups: Vec<RouteGroup>,
    /// Topology with directive roles applied.
    pub topology: Topology,
    pub env: ChannelEnvironment,
    symbols: BTreeMap<String, Symbol>,
}

impl NetworkControlProblem {
    pub fn var(&self, id: VarId) -> &VariableDecl {
        &self.vars[id.0 as usize]
    }

    pub fn param(&self, id: ParamId) -> &ParamDecl {
        &self.params[id.0 as usize]
    }

    /// Looks up a variable or parameter by its canonical name.
    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        self.symbols.get(name).copied()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        match self.symbol(name) {
            Some(Symbol::Var(v)) => Some(v),
            _ => None,
        }
    }

    pub fn symbol_name(&self, s: Symbol) -> &str {
        match s {
            Symbol::Var(v) => &self.var(v).name,
            Symbol::Param(p) => &self.param(p).name,
        }
    }

    pub fn links(&self) -> Vec<Link> {
        self.route_groups
            .iter()
            .flat_map(|g| g.candidates.iter().map(move |&h| Link { tx: g.node, rx: h, dest: g.destination }))
            .collect()
    }

    pub fn constraint(&self, tag: &ConstraintTag) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.tag == *tag)
    }

    pub fn param_binding(&self) -> Binding {
        let mut b = Binding::new();
        for p in &self.params {
            b.set_param(p.id, p.value);
        }
        b
    }

    /// Binding with every variable at its value in `op` and parameters at
    /// their registered values.
    pub fn binding_at(&self, op: &OperatingPoint) -> Binding {
        let carrying = op.carrying(&self.topology);
        let mut b = self.param_binding();
        for v in &self.vars {
            b.set_var(v.id, op.value(v.owner, &v.kind, &carrying));
        }
        b
    }

    pub fn vars_of(&self, node: NodeId) -> Vec<VarId> {
        self.vars.iter().filter(|v| v.owner == node).map(|v| v.id).collect()
    }
}

impl SymbolNames for NetworkControlProblem {
    fn name(&self, s: Symbol) -> String {
        self.symbol_name(s).to_string()
    }
}

impl fmt::Display for NetworkControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "minimize {}", self.objective.render(self))?;
        for c in &self.constraints {
            writeln!(f, "  {}: {} >= 0", c.tag.label(&self.topology), c.expr.render(self))?;
        }
        Ok(())
    }
}

struct Builder<'a> {
    topo: &'a Topology,
    env: &'a ChannelEnvironment,
    positions: &'a [Position],
    vars: Vec<VariableDecl>,
    params: Vec<ParamDecl>,
    symbols: BTreeMap<String, Symbol>,
    gains: BTreeMap<(NodeId, NodeId), Expression>,
    pos: Vec<[Expression; 3]>,
    power: Vec<Expression>,
}

impl Builder<'_> {
    fn add_var(&mut self, owner: NodeId, kind: VarKind, lo: f64, hi: f64) -> Expression {
        let id = VarId(self.vars.len() as u32);
        let name = value_name(self.topo, owner, &kind);
        self.symbols.insert(name.clone(), Symbol::Var(id));
        self.vars.push(VariableDecl { id, name, owner, layer: kind.layer(), kind, lo, hi });
        Expression::var(id)
    }

    fn add_param(&mut self, name: String, kind: ParamKind, value: f64) -> Expression {
        let id = ParamId(self.params.len() as u32);
        self.symbols.insert(name.clone(), Symbol::Param(id));
        self.params.push(ParamDecl { id, name, kind, value });
        Expression::param(id)
    }

    fn frozen(&mut self, owner: NodeId, kind: VarKind, value: f64) -> Expression {
        let name = value_name(self.topo, owner, &kind);
        self.add_param(name, ParamKind::Frozen { owner, kind }, value)
    }

    fn position_is_frozen(&self, n: NodeId) -> bool {
        self.pos[n.index()].iter().all(|e| matches!(e.node(), crate::expr::Node::Param(_)))
    }

    /// `G(π_from, π_to)`; a parameter when both positions are frozen.
    fn gain(&mut self, from: NodeId, to: NodeId) -> Result<Expression, NcpError> {
        if let Some(g) = self.gains.get(&(from, to)) {
            return Ok(g.clone());
        }
        let g = if self.position_is_frozen(from) && self.position_is_frozen(to) {
            let value = channel_gain(&self.positions[from.index()], &self.positions[to.index()], self.env)
                .map_err(|_| NcpError::CoincidentPositions(from, to))?;
            let name = format!("G_{}_{}", self.topo.name(from), self.topo.name(to));
            self.add_param(name, ParamKind::Gain { from, to }, value)
        } else {
            gain_expression(&self.pos[from.index()], &self.pos[to.index()], self.env)
        };
        self.gains.insert((from, to), g.clone());
        Ok(g)
    }

    /// Received interference at `rx` from every node other than `tx` and `rx`.
    fn interference(&mut self, tx: NodeId, rx: NodeId) -> Result<Expression, NcpError> {
        let mut terms = Vec::new();
        for j in 0..self.topo.nodes.len() {
            let j = NodeId(j as u32);
            if j == tx || j == rx {
                continue;
            }
            let g = self.gain(j, rx)?;
            terms.push(Expression::mul(g, self.power[j.index()].clone()));
        }
        Ok(Expression::sum(terms))
    }
}

/// `g0 · max(‖a − b‖², d0²)^(−η/2)` over position coordinates.
pub fn gain_expression(a: &[Expression; 3], b: &[Expression; 3], env: &ChannelEnvironment) -> Expression {
    let squares = (0..3)
        .map(|k| {
            let d = Expression::sub(a[k].clone(), b[k].clone());
            Expression::mul(d.clone(), d)
        })
        .collect();
    let d2 = Expression::clamp_min(Expression::sum(squares), env.d0 * env.d0);
    Expression::mul(Expression::constant(env.g0), Expression::pow(d2, -env.eta / 2.0))
}

/// `G·p_tx − x·γ·(N + I)`.
pub fn sinr_form(signal_gain: Expression, p_tx: Expression, x: Expression, gamma: Expression, noise: Expression, interference: Expression) -> Expression {
    let demand = Expression::mul(Expression::mul(x, gamma), Expression::add(noise, interference));
    Expression::sub(Expression::mul(signal_gain, p_tx), demand)
}

/// `B·log(1 + G·p_tx/(N + I))/log(2) − x·r`.
pub fn capacity_form(
    bandwidth: Expression,
    signal_gain: Expression,
    p_tx: Expression,
    noise: Expression,
    interference: Expression,
    x: Expression,
    rate: Expression,
) -> Expression {
    let sinr = Expression::div(Expression::mul(signal_gain, p_tx), Expression::add(noise, interference));
    let bits = Expression::div(
        Expression::log(Expression::add(Expression::one(), sinr)),
        Expression::log(Expression::constant(2.0)),
    );
    Expression::sub(Expression::mul(bandwidth, bits), Expression::mul(x, rate))
}

fn check_directive(d: &Directive) -> Result<(), NcpError> {
    let bad = |m: &str| Err(NcpError::InconsistentDirective(m.to_string()));
    if d.layers.contains(&LayerId::Mac) {
        return bad("the MAC layer is not optimizable");
    }
    if !(d.gamma > 0.0) {
        return bad("SINR threshold must be positive");
    }
    let (plo, phi) = d.bounds.power_mw;
    if !(0.0 <= plo && plo <= phi) {
        return bad("power bounds must satisfy 0 <= lo <= hi");
    }
    let (rlo, rhi) = d.bounds.rate_bps;
    if !(0.0 <= rlo && rlo <= rhi) {
        return bad("rate bounds must satisfy 0 <= lo <= hi");
    }
    if d.objective == ObjectiveTemplate::MaxLogRate && d.optimizes(LayerId::Transport) && rlo <= 0.0 {
        return bad("max-log-rate needs a strictly positive rate lower bound");
    }
    Ok(())
}

/// Builds the problem for directive `d` around the operating point `op`.
///
/// Candidate links come from the positions in `op`; quantities the directive
/// does not optimize are frozen at their values in `op`.
pub fn construct_ncp(
    d: &Directive,
    topo: &Topology,
    env: &ChannelEnvironment,
    op: &OperatingPoint,
) -> Result<NetworkControlProblem, NcpError> {
    check_directive(d)?;
    let eff = effective_topology(d, topo)?;
    let n = eff.nodes.len();
    if op.positions.len() != n || op.powers.len() != n {
        return Err(NcpError::InconsistentDirective("operating point does not match the topology".into()));
    }
    let mut positions = op.positions.clone();
    for node in &eff.nodes {
        if node.hold {
            positions[node.id.index()] = node.start;
        }
    }
    let carrying = op.carrying(&eff);
    let groups = route_groups(&eff, &positions, env);

    let mut b = Builder {
        topo: &eff,
        env,
        positions: &positions,
        vars: Vec::new(),
        params: Vec::new(),
        symbols: BTreeMap::new(),
        gains: BTreeMap::new(),
        pos: Vec::new(),
        power: Vec::new(),
    };
    let gamma = b.add_param("min_snr".into(), ParamKind::MinSnr, d.gamma);
    let noise = b.add_param("noise".into(), ParamKind::Noise, env.noise_mw);
    let bandwidth = b.add_param("bandwidth".into(), ParamKind::Bandwidth, env.bandwidth_hz);

    let (plo, phi) = d.bounds.power_mw;
    for node in &eff.nodes {
        let p = if d.optimizes(LayerId::Physical) {
            b.add_var(node.id, VarKind::TxPower, plo, phi)
        } else {
            b.frozen(node.id, VarKind::TxPower, op.powers[node.id.index()])
        };
        b.power.push(p);
    }
    for node in &eff.nodes {
        let mobile = d.optimizes(LayerId::Motion) && !node.hold;
        let coords = std::array::from_fn(|a| {
            if mobile {
                b.add_var(node.id, VarKind::Position(a), eff.arena.min[a], eff.arena.max[a])
            } else {
                b.frozen(node.id, VarKind::Position(a), positions[node.id.index()].axis(a))
            }
        });
        b.pos.push(coords);
    }
    let mut route = BTreeMap::new();
    for g in &groups {
        for &h in &g.candidates {
            let link = Link { tx: g.node, rx: h, dest: g.destination };
            let kind = VarKind::RouteIndicator { next_hop: h, destination: g.destination };
            let x = if d.optimizes(LayerId::Network) && g.candidates.len() > 1 {
                b.add_var(g.node, kind, 0.0, 1.0)
            } else {
                let value = op.value(g.node, &kind, &carrying);
                b.frozen(g.node, kind, value)
            };
            route.insert(link, x);
        }
    }
    let (rlo, rhi) = d.bounds.rate_bps;
    let mut rate = BTreeMap::new();
    for s in &eff.sessions {
        let r = if d.optimizes(LayerId::Transport) {
            b.add_var(s.source, VarKind::SessionRate(s.id), rlo, rhi)
        } else {
            let value = op.rates.get(&s.id).copied().unwrap_or(rlo);
            b.frozen(s.source, VarKind::SessionRate(s.id), value)
        };
        rate.insert(s.id, r);
    }

    let mut constraints = Vec::new();
    for (link, x) in &route {
        let g = b.gain(link.tx, link.rx)?;
        let interference = b.interference(link.tx, link.rx)?;
        let p = b.power[link.tx.index()].clone();
        let expr = sinr_form(g, p, x.clone(), gamma.clone(), noise.clone(), interference);
        constraints.push(Constraint { tag: ConstraintTag::Sinr(*link), expr });
    }
    if d.optimizes(LayerId::Transport) {
        let links: Vec<Link> = route.keys().copied().collect();
        for (sid, link) in capacity_pairs(&eff, &links) {
            let g = b.gain(link.tx, link.rx)?;
            let interference = b.interference(link.tx, link.rx)?;
            let p = b.power[link.tx.index()].clone();
            let x = route[&link].clone();
            let expr = capacity_form(bandwidth.clone(), g, p, noise.clone(), interference, x, rate[&sid].clone());
            constraints.push(Constraint { tag: ConstraintTag::Capacity(sid, link), expr });
        }
    }

    let is_var = |e: &Expression| matches!(e.node(), crate::expr::Node::Var(_));
    let (objective, objective_terms) = match d.objective {
        ObjectiveTemplate::MinPower => {
            let terms: Vec<ObjectiveTerm> = eff
                .nodes
                .iter()
                .map(|node| {
                    let p = b.power[node.id.index()].clone();
                    ObjectiveTerm { owner: is_var(&p).then_some(node.id), expr: p }
                })
                .collect();
            (Expression::sum(terms.iter().map(|t| t.expr.clone()).collect()), terms)
        }
        ObjectiveTemplate::MaxLogRate => {
            let logs: Vec<Expression> = eff.sessions.iter().map(|s| Expression::log(rate[&s.id].clone())).collect();
            let terms = eff
                .sessions
                .iter()
                .map(|s| {
                    let r = rate[&s.id].clone();
                    ObjectiveTerm { owner: is_var(&r).then_some(s.source), expr: Expression::neg(Expression::log(r)) }
                })
                .collect();
            (Expression::neg(Expression::sum(logs)), terms)
        }
    };

    let Builder { vars, params, symbols, .. } = b;
    Ok(NetworkControlProblem {
        template: d.objective,
        layers: d.layers.clone(),
        gamma: d.gamma,
        bounds: d.bounds,
        objective,
        objective_terms,
        constraints,
        vars,
        params,
        route_groups: groups,
        topology: eff,
        env: env.clone(),
        symbols,
    })
}

/// The SINR constraint θ for the candidate link `i → k`. When the pair
/// serves several destinations the one with the lowest destination id is
/// returned.
pub fn sinr_constraint(i: NodeId, k: NodeId, p: &NetworkControlProblem) -> Result<Expression, NcpError> {
    p.constraints
        .iter()
        .find(|c| matches!(c.tag, ConstraintTag::Sinr(l) if l.tx == i && l.rx == k))
        .map(|c| c.expr.clone())
        .ok_or(NcpError::UnknownPair(i, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{Arena, NodeSpec, Session};

    fn node(i: u32, name: &str, pos: [f64; 3], role: Role, hold: bool) -> NodeSpec {
        NodeSpec { id: NodeId(i), name: name.into(), start: Position::from_array(pos), role, hold, v_max: 2.0 }
    }

    fn chain() -> (Topology, Directive, ChannelEnvironment) {
        let topo = Topology {
            nodes: vec![
                node(0, "S", [0.0, 0.0, 2.0], Role::Source, true),
                node(1, "R", [20.0, 0.0, 2.0], Role::Relay, false),
                node(2, "D", [40.0, 0.0, 2.0], Role::Destination, true),
            ],
            sessions: vec![Session { id: SessionId(1), source: NodeId(0), destination: NodeId(2) }],
            arena: Arena { min: [0.0, -20.0, 0.0], max: [60.0, 20.0, 10.0] },
        };
        let d = Directive {
            objective: ObjectiveTemplate::MaxLogRate,
            layers: [LayerId::Motion, LayerId::Physical, LayerId::Network, LayerId::Transport].into(),
            roles: BTreeMap::new(),
            gamma: 1.0,
            bounds: DefaultBounds { power_mw: (0.0, 1000.0), rate_bps: (5e3, 5e6) },
        };
        let env = ChannelEnvironment { d_max: 25.0, ..ChannelEnvironment::default() };
        (topo, d, env)
    }

    #[test]
    fn chain_registry() {
        let (topo, d, env) = chain();
        let op = OperatingPoint::initial(&topo, &d, &env).unwrap();
        let p = construct_ncp(&d, &topo, &env, &op).unwrap();
        let count = |f: &dyn Fn(&VarKind) -> bool| p.vars.iter().filter(|v| f(&v.kind)).count();
        assert_eq!(count(&|k| matches!(k, VarKind::SessionRate(_))), 1);
        assert_eq!(count(&|k| matches!(k, VarKind::TxPower)), 3);
        assert_eq!(count(&|k| matches!(k, VarKind::RouteIndicator { .. })), 0);
        let x = p.symbol("x_S_R_D").unwrap();
        match x {
            Symbol::Param(id) => assert_eq!(p.param(id).value, 1.0),
            Symbol::Var(_) => panic!("single candidate must be frozen"),
        }
        assert_eq!(p.objective.render(&p), "neg(sum(log(r_1)))");
    }

    #[test]
    fn registry_is_complete() {
        let (topo, d, env) = chain();
        let op = OperatingPoint::initial(&topo, &d, &env).unwrap();
        let p = construct_ncp(&d, &topo, &env, &op).unwrap();
        let nv = p.vars.len() as u32;
        let np = p.params.len() as u32;
        for c in &p.constraints {
            assert!(c.expr.free_vars().iter().all(|v| v.0 < nv));
            assert!(c.expr.free_params().iter().all(|q| q.0 < np));
        }
    }

    #[test]
    fn excluding_motion_removes_position_variables() {
        let (topo, mut d, env) = chain();
        d.layers.remove(&LayerId::Motion);
        let op = OperatingPoint::initial(&topo, &d, &env).unwrap();
        let p = construct_ncp(&d, &topo, &env, &op).unwrap();
        assert!(p.vars.iter().all(|v| !matches!(v.kind, VarKind::Position(_))));
        assert!(p.symbol("pos_R_x").is_some());
    }

    #[test]
    fn mac_layer_is_rejected() {
        let (topo, mut d, env) = chain();
        d.layers.insert(LayerId::Mac);
        let op = OperatingPoint::initial(&topo, &d.clone(), &env).unwrap();
        assert!(matches!(construct_ncp(&d, &topo, &env, &op), Err(NcpError::InconsistentDirective(_))));
    }

    #[test]
    fn unknown_pair() {
        let (topo, d, env) = chain();
        let op = OperatingPoint::initial(&topo, &d, &env).unwrap();
        let p = construct_ncp(&d, &topo, &env, &op).unwrap();
        assert_eq!(sinr_constraint(NodeId(2), NodeId(0), &p), Err(NcpError::UnknownPair(NodeId(2), NodeId(0))));
    }
}
