//! Decision plane: multiplier replication, route selection and the local
//! solve.

use std::collections::{BTreeMap, BTreeSet};

use crate::codegen::{ExecutablePlan, ParamSource};
use crate::expr::{CompiledExpr, DenseEnv, VarId};
use crate::ncp::{value_name, ConstraintTag, LayerId, VarKind};
use crate::netsim::{NodeId, SessionId};

use super::registers::{keys, LutValue, RegisterPlane};

/// Payload broadcast at the end of a round: the sender's current values and
/// the multipliers it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMessage {
    pub sender: NodeId,
    pub round: u64,
    pub values: Vec<(String, f64)>,
    pub lambdas: Vec<(ConstraintTag, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig {
    /// Rounds without news after which a peer counts as stale.
    pub staleness: u64,
    pub conv_tol: f64,
    pub conv_rounds: u32,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self { staleness: 3, conv_tol: 1e-4, conv_rounds: 5 }
    }
}

/// Linearization of a tracked constraint at the current expansion point.
#[derive(Debug, Clone, PartialEq)]
struct Expansion {
    tag: ConstraintTag,
    value: f64,
    coeffs: Vec<(String, f64)>,
    scale: f64,
    /// Nodes whose values enter the constraint.
    depends_on: BTreeSet<NodeId>,
}

impl Expansion {
    fn at(&self, current: &BTreeMap<String, f64>, base: &BTreeMap<String, f64>) -> f64 {
        let mut acc = self.value;
        for (name, a) in &self.coeffs {
            let u = current.get(name).copied().unwrap_or(0.0);
            let b = base.get(name).copied().unwrap_or(0.0);
            acc += a * (u - b);
        }
        acc
    }
}

#[derive(Debug, Clone)]
struct Compiled {
    share: CompiledExpr,
    share_grad: Vec<CompiledExpr>,
    /// Exact SINR of each outgoing link, keyed by (next hop, destination).
    sinr_out: BTreeMap<(NodeId, NodeId), CompiledExpr>,
}

/// Per-node decision state for one installed plan.
#[derive(Debug, Clone)]
pub struct DecisionState {
    pub plan: ExecutablePlan,
    compiled: Compiled,
    cfg: DecisionConfig,
    installed_at: u64,
    base: BTreeMap<String, f64>,
    current: BTreeMap<String, f64>,
    lambda: BTreeMap<ConstraintTag, f64>,
    received: BTreeMap<ConstraintTag, f64>,
    expansions: Vec<Expansion>,
    last_heard: BTreeMap<NodeId, u64>,
    previous: Option<Vec<f64>>,
    streak: u32,
    pub converged: bool,
}

fn compiled(plan: &ExecutablePlan) -> Compiled {
    let share_grad = (0..plan.locals.len()).map(|i| CompiledExpr::new(&plan.share.differentiate(VarId(i as u32)))).collect();
    let sinr_out = plan
        .outgoing
        .iter()
        .filter(|o| matches!(o.tag, ConstraintTag::Sinr(_)))
        .map(|o| ((o.link.rx, o.link.dest), CompiledExpr::new(&o.theta)))
        .collect();
    Compiled { share: CompiledExpr::new(&plan.share), share_grad, sinr_out }
}

/// Values of every quantity owned by `node`, read from its registers.
pub fn own_values(rp: &RegisterPlane, node: NodeId) -> Vec<(String, f64)> {
    let Some(view) = rp.view() else { return Vec::new() };
    let topo = &view.topology;
    let mut out = Vec::new();
    let p = rp.l(LayerId::Physical).real(keys::TX_POWER).unwrap_or(0.0);
    out.push((value_name(topo, node, &VarKind::TxPower), p));
    if let Some(pos) = rp.position() {
        for (a, x) in pos.iter().enumerate() {
            out.push((value_name(topo, node, &VarKind::Position(a)), *x));
        }
    }
    let l3 = rp.l(LayerId::Network);
    for g in view.groups.iter().filter(|g| g.node == node) {
        let dest = topo.name(g.destination);
        let hop = match l3.get(&keys::next_hop(dest)) {
            Some(LutValue::Nodes(v)) => v.first().copied(),
            _ => None,
        };
        let flag = l3.real(&keys::forwarding(dest)).unwrap_or(0.0);
        for &h in &g.candidates {
            let x = if hop == Some(h) { flag } else { 0.0 };
            out.push((value_name(topo, node, &VarKind::RouteIndicator { next_hop: h, destination: g.destination }), x));
        }
    }
    for s in topo.sessions.iter().filter(|s| s.source == node) {
        let r = rp.l(LayerId::Transport).real(&keys::rate(s.id.0)).unwrap_or(0.0);
        out.push((value_name(topo, node, &VarKind::SessionRate(s.id)), r));
    }
    out
}

impl DecisionState {
    /// Installs `plan` at round `round`; `point` holds the values of every
    /// network quantity the plan was built around. Multipliers start at zero.
    pub fn install(plan: ExecutablePlan, point: &BTreeMap<String, f64>, round: u64, cfg: DecisionConfig) -> Self {
        let compiled = compiled(&plan);
        let current: BTreeMap<String, f64> =
            point.iter().filter(|(k, _)| plan.quantity(k).is_some() || plan.local(k).is_some()).map(|(k, v)| (k.clone(), *v)).collect();
        Self {
            plan,
            compiled,
            cfg,
            installed_at: round,
            base: current.clone(),
            current,
            lambda: BTreeMap::new(),
            received: BTreeMap::new(),
            expansions: Vec::new(),
            last_heard: BTreeMap::new(),
            previous: None,
            streak: 0,
            converged: false,
        }
    }

    pub fn lambda(&self, tag: &ConstraintTag) -> f64 {
        self.lambda.get(tag).copied().unwrap_or(0.0)
    }

    pub fn base(&self) -> &BTreeMap<String, f64> {
        &self.base
    }

    /// Records an incoming message. Multipliers are taken only from their
    /// owner.
    pub fn receive(&mut self, m: &NeighborMessage) {
        for (name, v) in &m.values {
            if self.plan.quantity(name).is_some() {
                self.current.insert(name.clone(), *v);
            }
        }
        for (tag, l) in &m.lambdas {
            if tag.owner() == m.sender && self.plan.tracked.iter().any(|t| t.tag == *tag) {
                self.received.insert(*tag, *l);
            }
        }
        let e = self.last_heard.entry(m.sender).or_insert(0);
        *e = (*e).max(m.round);
    }

    fn stale(&self, n: NodeId, round: u64) -> bool {
        if n == self.plan.node {
            return false;
        }
        let heard = self.last_heard.get(&n).copied().unwrap_or(self.installed_at);
        round.saturating_sub(1).saturating_sub(heard) > self.cfg.staleness
    }

    /// Parameter vector with network quantities at `values`.
    fn params(&self, rp: &RegisterPlane, values: &BTreeMap<String, f64>) -> Vec<f64> {
        let scales: BTreeMap<ConstraintTag, f64> = self.expansions.iter().map(|e| (e.tag, e.scale)).collect();
        self.plan
            .params
            .iter()
            .map(|p| match &p.source {
                ParamSource::Hw(k) => rp.l(LayerId::Physical).real(k.register()).unwrap_or(0.0),
                ParamSource::Lambda(tag) => {
                    let s = scales.get(tag).copied().unwrap_or(1.0);
                    self.plan.scale * self.lambda(tag) / s
                }
                ParamSource::Net(name) => values.get(name).copied().unwrap_or(0.0),
            })
            .collect()
    }

    fn relinearize(&mut self, rp: &RegisterPlane) {
        self.base = self.current.clone();
        let params = self.params(rp, &self.base);
        let env = DenseEnv { vars: &[], params: &params };
        let mut out = Vec::new();
        for t in &self.plan.tracked {
            let value = t.base_value.evaluate(&env).unwrap_or(0.0);
            let mut coeffs = Vec::new();
            let mut scale = 0.0f64;
            let mut depends_on = BTreeSet::new();
            for (name, e) in &t.coeffs {
                let a = e.evaluate(&env).unwrap_or(0.0);
                let q = self.plan.quantity(name);
                let w = q.map_or(0.0, |q| q.width);
                if let Some(q) = q {
                    depends_on.insert(q.owner);
                }
                scale = scale.max(a.abs() * w);
                coeffs.push((name.clone(), a));
            }
            let scale = if scale > 0.0 { scale } else { 1.0 };
            out.push(Expansion { tag: t.tag, value, coeffs, scale, depends_on });
        }
        self.expansions = out;
    }

    /// Coefficient of each local variable in `Σ λ_c lin_c`, skipping the
    /// constraints for which `skip` holds.
    fn penalty_gradient(&self, skip: impl Fn(&ConstraintTag) -> bool) -> Vec<f64> {
        let mut g = vec![0.0; self.plan.locals.len()];
        for e in &self.expansions {
            if skip(&e.tag) {
                continue;
            }
            let l = self.plan.scale * self.lambda(&e.tag) / e.scale;
            if l == 0.0 {
                continue;
            }
            for (name, a) in &e.coeffs {
                if let Some(v) = self.plan.local(name) {
                    g[v.0 as usize] += l * a;
                }
            }
        }
        g
    }

    fn local_values(&self, source: &BTreeMap<String, f64>) -> Vec<f64> {
        self.plan.locals.iter().map(|v| source.get(&v.name).copied().unwrap_or(v.lo)).collect()
    }

    /// One round of the decision plane. Incoming messages must already have
    /// been passed to [`DecisionState::receive`]. Writes the solution tables.
    pub fn step(&mut self, rp: &mut RegisterPlane, round: u64) {
        let me = self.plan.node;
        for (name, v) in own_values(rp, me) {
            if self.plan.quantity(&name).is_some() || self.plan.local(&name).is_some() {
                self.current.insert(name, v);
            }
        }
        let local_round = round - self.installed_at + 1;
        let period = u64::from(self.plan.header.relinearize.max(1));
        if (local_round - 1) % period == 0 || self.expansions.is_empty() {
            self.relinearize(rp);
        }

        if local_round > 1 {
            let k = (local_round - 1) % period + 1;
            let alpha = self.plan.header.schedule.alpha(k);
            let mut next = BTreeMap::new();
            for e in &self.expansions {
                let owner = e.tag.owner();
                let prev = if owner == me {
                    self.lambda(&e.tag)
                } else {
                    self.received.get(&e.tag).copied().unwrap_or_else(|| self.lambda(&e.tag))
                };
                let frozen = owner == me && e.depends_on.iter().any(|&n| self.stale(n, round));
                let l = if frozen { prev } else { (prev - alpha * e.at(&self.current, &self.base) / e.scale).max(0.0) };
                next.insert(e.tag, l);
            }
            self.lambda = next;
        }
        self.received.clear();

        let base_params = self.params(rp, &self.base);
        let cur_params = self.params(rp, &self.current);
        let mut x = self.local_values(&self.current);
        let hops = self.select_routes(rp, &mut x, &base_params, &cur_params);
        let (lo, hi) = self.box_bounds(rp);
        let penalty = self.penalty_gradient(|_| false);
        let anchor = self.local_values(&self.base);
        let free: Vec<bool> = (0..x.len()).map(|i| self.plan.is_continuous(VarId(i as u32)) && hi[i] > lo[i]).collect();
        let widths: Vec<f64> = self.plan.locals.iter().map(|v| v.width.max(f64::MIN_POSITIVE)).collect();
        let problem = LocalProblem {
            share: &self.compiled.share,
            share_grad: &self.compiled.share_grad,
            params: &base_params,
            penalty: &penalty,
            anchor: &anchor,
            widths: &widths,
            weight: self.plan.scale * self.plan.header.proximal,
        };
        let x = solve_local(&problem, &x, &lo, &hi, &free);
        self.write_solution(rp, &x, &hops);
        self.track_convergence(&x);

    }

    /// Message for the end of `round`: the node's values after actuation and
    /// the multipliers it owns. `None` when the plan exchanges no messages.
    pub fn outgoing(&self, rp: &RegisterPlane, round: u64) -> Option<NeighborMessage> {
        if self.plan.routing.send_to.is_empty() {
            return None;
        }
        let me = self.plan.node;
        let lambdas = self.expansions.iter().filter(|e| e.tag.owner() == me).map(|e| (e.tag, self.lambda(&e.tag))).collect();
        Some(NeighborMessage { sender: me, round, values: own_values(rp, me), lambdas })
    }

    /// Variable boxes for this round. Positions are further limited to what
    /// the node can reach within one round.
    fn box_bounds(&self, rp: &RegisterPlane) -> (Vec<f64>, Vec<f64>) {
        let l0 = rp.l(LayerId::Motion);
        let reach = l0.real(keys::V_MAX).unwrap_or(0.0) * l0.real(keys::DT).unwrap_or(0.0) / 3f64.sqrt();
        let pos = rp.position();
        self.plan
            .locals
            .iter()
            .map(|v| match (v.kind, pos) {
                (VarKind::Position(a), Some(p)) => (v.lo.max(p[a] - reach), v.hi.min(p[a] + reach)),
                _ => (v.lo, v.hi),
            })
            .map(|(lo, hi)| if lo <= hi { (lo, hi) } else { (hi, hi) })
            .unzip()
    }

    /// Picks a next hop per route group and sets the indicators to the
    /// forwarding flag on the chosen link. Returns the choices.
    fn select_routes(
        &self,
        rp: &RegisterPlane,
        x: &mut [f64],
        base_params: &[f64],
        cur_params: &[f64],
    ) -> BTreeMap<NodeId, NodeId> {
        let mut chosen = BTreeMap::new();
        let Some(view) = rp.view() else { return chosen };
        let anchor = self.local_values(&self.base);
        let me = self.plan.node;
        let power = self.plan.locals.iter().position(|v| v.kind == VarKind::TxPower);
        let mut stack = Vec::new();
        for g in &self.plan.groups {
            let dest = g.destination;
            let flag = rp.l(LayerId::Network).real(&keys::forwarding(view.topology.name(dest))).unwrap_or(0.0);
            let penalty = self.penalty_gradient(|t| t.link().tx == me && t.link().dest == dest);
            let mut best: Option<(f64, NodeId, Option<f64>)> = None;
            for &(h, _) in &g.candidates {
                let mut trial = x.to_vec();
                for &(h2, v2) in &g.candidates {
                    trial[v2.0 as usize] = if h2 == h { 1.0 } else { 0.0 };
                }
                let p_req = match (power, self.compiled.sinr_out.get(&(h, dest))) {
                    (Some(pi), Some(theta)) => {
                        let v = &self.plan.locals[pi];
                        trial[pi] = 0.0;
                        let t0 = theta.eval(&trial, cur_params, &mut stack);
                        trial[pi] = 1.0;
                        let t1 = theta.eval(&trial, cur_params, &mut stack);
                        let slope = t1 - t0;
                        let p = if slope > 0.0 && t0.is_finite() { -t0 / slope } else { v.hi };
                        trial[pi] = p.clamp(v.lo, v.hi);
                        Some(trial[pi])
                    }
                    _ => None,
                };
                let mut cost = self.compiled.share.eval(&trial, base_params, &mut stack);
                for (i, c) in penalty.iter().enumerate() {
                    cost -= c * (trial[i] - anchor[i]);
                }
                let better = match best {
                    None => true,
                    Some((bc, bh, _)) => cost < bc - 1e-12 * bc.abs().max(1.0) || (cost <= bc && h < bh),
                };
                if better {
                    best = Some((cost, h, p_req));
                }
            }
            if let Some((_, h, _)) = best {
                for &(h2, v2) in &g.candidates {
                    x[v2.0 as usize] = if h2 == h { flag } else { 0.0 };
                }
                chosen.insert(dest, h);
            }
        }
        chosen
    }

    fn write_solution(&self, rp: &mut RegisterPlane, x: &[f64], hops: &BTreeMap<NodeId, NodeId>) {
        let Some(view) = rp.view().cloned() else { return };
        let topo = &view.topology;
        let mut pos = rp.position();
        for (i, v) in self.plan.locals.iter().enumerate() {
            match v.kind {
                VarKind::TxPower => rp.s_mut(LayerId::Physical).set_real(keys::TX_POWER, x[i]),
                VarKind::Position(a) => {
                    if let Some(p) = pos.as_mut() {
                        p[a] = x[i];
                    }
                }
                VarKind::SessionRate(s) => rp.s_mut(LayerId::Transport).set_real(keys::rate(s.0), x[i]),
                VarKind::RouteIndicator { .. } => {}
            }
        }
        if let Some(p) = pos {
            if self.plan.locals.iter().any(|v| matches!(v.kind, VarKind::Position(_))) {
                rp.s_mut(LayerId::Physical).set(keys::POSITION, LutValue::Vector(p.to_vec()));
            }
        }
        for (dest, h) in hops {
            rp.s_mut(LayerId::Network).set(keys::next_hop(topo.name(*dest)), LutValue::Nodes(vec![*h]));
        }
    }

    fn track_convergence(&mut self, x: &[f64]) {
        let tol = self.cfg.conv_tol;
        let still = self.previous.as_ref().is_some_and(|prev| {
            prev.iter().zip(x).all(|(o, n)| (n - o).abs() <= tol * o.abs().max(n.abs()))
        });
        self.streak = if still { self.streak + 1 } else { 0 };
        self.converged = self.streak >= self.cfg.conv_rounds;
        self.previous = Some(x.to_vec());
    }
}

/// `share(v) − penalty·(v − anchor) + (weight/2)·Σ((v − anchor)/w)²`.
pub struct LocalProblem<'a> {
    pub share: &'a CompiledExpr,
    pub share_grad: &'a [CompiledExpr],
    pub params: &'a [f64],
    pub penalty: &'a [f64],
    pub anchor: &'a [f64],
    pub widths: &'a [f64],
    pub weight: f64,
}

impl LocalProblem<'_> {
    pub fn value(&self, x: &[f64], stack: &mut Vec<f64>) -> f64 {
        let mut f = self.share.eval(x, self.params, stack);
        for i in 0..x.len() {
            let d = x[i] - self.anchor[i];
            f -= self.penalty[i] * d;
            let z = d / self.widths[i];
            f += 0.5 * self.weight * z * z;
        }
        f
    }

    pub fn gradient(&self, x: &[f64], stack: &mut Vec<f64>) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let d = x[i] - self.anchor[i];
                self.share_grad[i].eval(x, self.params, stack) - self.penalty[i]
                    + self.weight * d / (self.widths[i] * self.widths[i])
            })
            .collect()
    }
}

/// Projected gradient descent with Armijo backtracking over the box
/// `[lo, hi]`, moving only the coordinates marked `free`. Steps are taken in
/// width-normalized coordinates.
pub fn solve_local(p: &LocalProblem<'_>, x0: &[f64], lo: &[f64], hi: &[f64], free: &[bool]) -> Vec<f64> {
    const BETA: f64 = 0.5;
    const C: f64 = 1e-4;
    const TOL: f64 = 1e-6;
    const MAX_ITER: usize = 500;
    let n = x0.len();
    let mut stack = Vec::new();
    let mut x: Vec<f64> = (0..n).map(|i| if free[i] { x0[i].clamp(lo[i], hi[i]) } else { x0[i] }).collect();
    if !free.iter().any(|&f| f) {
        return x;
    }
    let mut fx = p.value(&x, &mut stack);
    let mut step = 1.0 / p.weight.max(1e-12);
    for _ in 0..MAX_ITER {
        let g = p.gradient(&x, &mut stack);
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    if free[i] {
                        let w2 = p.widths[i] * p.widths[i];
                        (x[i] - s * w2 * g[i]).clamp(lo[i], hi[i])
                    } else {
                        x[i]
                    }
                })
                .collect();
            let decrease: f64 = (0..n).map(|i| g[i] * (y[i] - x[i])).sum();
            let fy = p.value(&y, &mut stack);
            if fy.is_finite() && fy <= fx + C * decrease {
                accepted = Some((y, fy));
                break;
            }
            s *= BETA;
        }
        let Some((y, fy)) = accepted else { break };
        let moved = (0..n).map(|i| ((y[i] - x[i]) / p.widths[i]).abs()).fold(0.0, f64::max);
        x = y;
        fx = fy;
        step = s * 2.0;
        if moved < TOL {
            break;
        }
    }
    x
}

/// Applies the solution tables to the state tables. Positions move at most
/// `v_max·dt` toward their target and not at all in hold mode; powers are
/// clamped to the hardware range.
pub fn data_plane_apply(rp: &mut RegisterPlane) -> Actuation {
    let mut act = Actuation::default();
    if let Some(p) = rp.s(LayerId::Physical).real(keys::TX_POWER) {
        let l1 = rp.l(LayerId::Physical);
        let lo = l1.real(keys::POWER_LO).unwrap_or(f64::NEG_INFINITY);
        let hi = l1.real(keys::POWER_HI).unwrap_or(f64::INFINITY);
        let p = p.max(lo).min(hi);
        rp.l_mut(LayerId::Physical).set_real(keys::TX_POWER, p);
        act.power = Some(p);
    }
    let hold = rp.l(LayerId::Motion).real(keys::HOLD).unwrap_or(0.0) != 0.0;
    let target = rp.s(LayerId::Physical).get(keys::POSITION).cloned();
    if let (Some(LutValue::Vector(target)), Some(cur), false) = (target, rp.position(), hold) {
        let l0 = rp.l(LayerId::Motion);
        let reach = l0.real(keys::V_MAX).unwrap_or(0.0) * l0.real(keys::DT).unwrap_or(0.0);
        let d: Vec<f64> = (0..3).map(|a| target[a] - cur[a]).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = if norm > reach && norm > 0.0 { reach / norm } else { 1.0 };
        let next: Vec<f64> = (0..3).map(|a| cur[a] + f * d[a]).collect();
        rp.l_mut(LayerId::Motion).set(keys::POSITION, LutValue::Vector(next.clone()));
        act.position = Some([next[0], next[1], next[2]]);
    }
    let hops: Vec<(String, LutValue)> = rp
        .s(LayerId::Network)
        .keys()
        .filter(|k| k.starts_with("next_hop."))
        .map(|k| (k.to_string(), rp.s(LayerId::Network).get(k).cloned().unwrap()))
        .collect();
    for (k, v) in hops {
        if let LutValue::Nodes(n) = &v {
            if let Some(h) = n.first() {
                act.next_hops.push((k["next_hop.".len()..].to_string(), *h));
            }
        }
        rp.l_mut(LayerId::Network).set(k, v);
    }
    let rates: Vec<(String, f64)> = rp
        .s(LayerId::Transport)
        .keys()
        .filter_map(|k| rp.s(LayerId::Transport).real(k).map(|v| (k.to_string(), v)))
        .collect();
    for (k, v) in rates {
        if let Some(id) = k.strip_prefix("rate.").and_then(|s| s.parse().ok()) {
            act.rates.push((SessionId(id), v));
        }
        rp.l_mut(LayerId::Transport).set_real(k, v);
    }
    act
}

/// What the data plane changed this round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Actuation {
    pub power: Option<f64>,
    pub position: Option<[f64; 3]>,
    /// (destination name, next hop).
    pub next_hops: Vec<(String, NodeId)>,
    pub rates: Vec<(SessionId, f64)>,
}
