//! Specialization of a template to one node.

use std::collections::{BTreeMap, BTreeSet};

use crate::expr::{simp, Expression, ParamId, Symbol, SymbolNames, VarId};
use crate::ncp::{
    capacity_pairs, gain_expression, value_name, ConstraintTag, LayerId, Link, NetworkControlProblem,
    ObjectiveTemplate, RoleAnnotation, RouteGroup, VarKind,
};
use crate::netsim::{NodeId, Role, SessionId, Topology};
use crate::pps::registers::{keys, RegisterPlane};

use super::library::{self, Family, KeywordKind};
use super::schematic::{Schem, SchemOp};
use super::script::{DeclClass, Header, TemplateScript};
use super::CodegenError;

/// What a node knows about the network it runs in: roles, sessions and the
/// candidate routes fixed at dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkView {
    pub topology: Topology,
    pub groups: Vec<RouteGroup>,
}

impl NetworkView {
    pub fn from_ncp(p: &NetworkControlProblem) -> Self {
        Self { topology: p.topology.clone(), groups: p.route_groups.clone() }
    }

    pub fn links(&self) -> Vec<Link> {
        self.groups
            .iter()
            .flat_map(|g| g.candidates.iter().map(move |&h| Link { tx: g.node, rx: h, dest: g.destination }))
            .collect()
    }

    pub fn flows(&self) -> Vec<(SessionId, Link)> {
        capacity_pairs(&self.topology, &self.links())
    }

    pub fn group(&self, node: NodeId, dest: NodeId) -> Option<&RouteGroup> {
        self.groups.iter().find(|g| g.node == node && g.destination == dest)
    }

    pub fn role(&self, n: NodeId) -> Role {
        self.topology.nodes[n.index()].role
    }

    pub fn is_hold(&self, n: NodeId) -> bool {
        self.topology.nodes[n.index()].hold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwKey {
    MinSnr,
    Noise,
    Bandwidth,
}

impl HwKey {
    pub fn register(self) -> &'static str {
        match self {
            HwKey::MinSnr => keys::MIN_SNR,
            HwKey::Noise => keys::NOISE,
            HwKey::Bandwidth => keys::BANDWIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource {
    Hw(HwKey),
    /// Scaled multiplier of a constraint.
    Lambda(ConstraintTag),
    /// A network quantity; bound to expansion-point values when evaluating
    /// the objective and to the latest values when evaluating exact θ.
    Net(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanParam {
    pub name: String,
    pub source: ParamSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalVar {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
    /// Normalization width, see [`NetQuantity::width`].
    pub width: f64,
}

/// A network quantity referenced by the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct NetQuantity {
    pub name: String,
    pub owner: NodeId,
    pub kind: VarKind,
    /// Optimized by its owner (as opposed to fixed).
    pub variable: bool,
    /// Normalization width, zero for fixed quantities: the box width, or
    /// for positions the distance the owner can cover in one
    /// relinearization period when that is smaller.
    pub width: f64,
}

/// `λ_c · lin(θ_c)` or, for owned constraints, `λ_c · θ_c(base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanPenalty {
    pub tag: ConstraintTag,
    pub expr: Expression,
}

/// Data needed to replicate the multiplier step of a constraint: θ at the
/// expansion point and its partial derivatives in every network variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedConstraint {
    pub tag: ConstraintTag,
    pub base_value: Expression,
    pub coeffs: Vec<(String, Expression)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutgoingLink {
    pub tag: ConstraintTag,
    pub link: Link,
    /// Exact θ over local variables and current network values.
    pub theta: Expression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRouteGroup {
    pub destination: NodeId,
    pub candidates: Vec<(NodeId, VarId)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageRouting {
    pub send_to: Vec<NodeId>,
    pub expect_from: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutablePlan {
    pub node: NodeId,
    pub annotation: RoleAnnotation,
    pub header: Header,
    /// Objective scale used to express multipliers and the proximal term.
    pub scale: f64,
    pub locals: Vec<LocalVar>,
    pub params: Vec<PlanParam>,
    pub quantities: Vec<NetQuantity>,
    pub share: Expression,
    pub penalties: Vec<PlanPenalty>,
    pub owned: Vec<PlanPenalty>,
    /// `share − Σ penalties − Σ owned`.
    pub objective: Expression,
    /// Objective plus the proximal term, minimized by the local solver.
    pub solve_objective: Expression,
    pub tracked: Vec<TrackedConstraint>,
    pub outgoing: Vec<OutgoingLink>,
    pub groups: Vec<PlanRouteGroup>,
    pub routing: MessageRouting,
}

impl ExecutablePlan {
    pub fn local(&self, name: &str) -> Option<VarId> {
        self.locals.iter().position(|v| v.name == name).map(|i| VarId(i as u32))
    }

    pub fn quantity(&self, name: &str) -> Option<&NetQuantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn local_names(&self) -> BTreeSet<String> {
        self.locals.iter().map(|v| v.name.clone()).collect()
    }

    /// Whether the local variable is optimized by the continuous solver
    /// (route indicators are chosen by route selection instead).
    pub fn is_continuous(&self, v: VarId) -> bool {
        !matches!(self.locals[v.0 as usize].kind, VarKind::RouteIndicator { .. })
    }
}

impl SymbolNames for ExecutablePlan {
    fn name(&self, s: Symbol) -> String {
        match s {
            Symbol::Var(v) => self.locals[v.0 as usize].name.clone(),
            Symbol::Param(p) => self.params[p.0 as usize].name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Idx {
    Node(NodeId),
    Link(Link),
    Flow(SessionId, Link),
    Session(SessionId),
}

enum Val {
    Scalar(Expression),
    Vector([Expression; 3]),
    Set(Vec<Idx>),
}

struct Interp<'a> {
    t: &'a TemplateScript,
    view: &'a NetworkView,
    me: NodeId,
    chan: (f64, f64, f64),
    dt: Option<f64>,
    /// Scratch variable ids index into `quantities`.
    quantities: Vec<NetQuantity>,
    quantity_index: BTreeMap<String, u32>,
    locals: Vec<LocalVar>,
    local_index: BTreeMap<String, VarId>,
    params: Vec<PlanParam>,
    param_index: BTreeMap<String, ParamId>,
    env: Vec<(String, Idx)>,
    penalties: Vec<PlanPenalty>,
    owned: Vec<PlanPenalty>,
    tracked: BTreeMap<ConstraintTag, TrackedConstraint>,
    outgoing: BTreeMap<ConstraintTag, OutgoingLink>,
}

fn err(msg: impl Into<String>) -> CodegenError {
    CodegenError::Instantiation(msg.into())
}

impl Interp<'_> {
    fn class(&self, keyword: &str) -> Option<DeclClass> {
        self.t.class_of(keyword)
    }

    fn width(&self, owner: NodeId, kind: &VarKind) -> f64 {
        let keyword = match kind {
            VarKind::TxPower => library::TX_POWER,
            VarKind::Position(a) => library::AXIS_KEYWORDS[*a],
            VarKind::RouteIndicator { .. } => library::ROUTE_ACTIVE,
            VarKind::SessionRate(_) => library::RATE,
        };
        let w = self.t.bound(keyword).map_or(0.0, |(lo, hi)| hi - lo);
        match (kind, self.dt) {
            (VarKind::Position(_), Some(dt)) => {
                let v = self.view.topology.nodes.get(owner.index()).map_or(0.0, |n| n.v_max);
                let reach = v * dt * f64::from(self.t.header.relinearize.max(1));
                if reach > 0.0 {
                    w.min(reach)
                } else {
                    w
                }
            }
            _ => w,
        }
    }

    fn is_variable(&self, owner: NodeId, kind: &VarKind) -> bool {
        let declared = |k: &str| self.class(k) == Some(DeclClass::Var);
        match kind {
            VarKind::TxPower => declared(library::TX_POWER) && self.view.role(owner) != Role::Destination,
            VarKind::Position(_) => declared(library::LOC) && !self.view.is_hold(owner),
            VarKind::RouteIndicator { destination, .. } => {
                declared(library::ROUTE_ACTIVE)
                    && self.view.group(owner, *destination).is_some_and(|g| g.candidates.len() > 1)
            }
            VarKind::SessionRate(_) => declared(library::RATE),
        }
    }

    fn net_param(&mut self, name: &str) -> ParamId {
        self.param(name.to_string(), ParamSource::Net(name.to_string()))
    }

    fn param(&mut self, name: String, source: ParamSource) -> ParamId {
        if let Some(&p) = self.param_index.get(&name) {
            return p;
        }
        let id = ParamId(self.params.len() as u32);
        self.params.push(PlanParam { name: name.clone(), source });
        self.param_index.insert(name, id);
        id
    }

    /// A network quantity as a scratch variable or a fixed parameter.
    fn quantity(&mut self, owner: NodeId, kind: VarKind) -> Expression {
        let name = value_name(&self.view.topology, owner, &kind);
        let variable = self.is_variable(owner, &kind);
        if !self.quantity_index.contains_key(&name) {
            let width = if variable { self.width(owner, &kind) } else { 0.0 };
            self.quantity_index.insert(name.clone(), self.quantities.len() as u32);
            self.quantities.push(NetQuantity { name: name.clone(), owner, kind, variable, width });
        }
        if variable {
            Expression::var(VarId(self.quantity_index[&name]))
        } else {
            Expression::param(self.net_param(&name))
        }
    }

    /// Replaces every scratch variable by its expansion-point parameter.
    fn at_base(&mut self, e: &Expression) -> Expression {
        let names: BTreeMap<VarId, String> =
            e.free_vars().into_iter().map(|v| (v, self.quantities[v.0 as usize].name.clone())).collect();
        let ids: BTreeMap<VarId, ParamId> = names.iter().map(|(v, n)| (*v, self.net_param(n))).collect();
        e.substitute(&mut |s| match s {
            Symbol::Var(v) => Some(Expression::param(ids[&v])),
            Symbol::Param(_) => None,
        })
    }

    /// Scratch variables owned by this node become plan locals, the rest
    /// current-value parameters.
    fn finish(&mut self, e: &Expression) -> Expression {
        let mut map = BTreeMap::new();
        for v in e.free_vars() {
            let name = self.quantities[v.0 as usize].name.clone();
            let target = match self.local_index.get(&name) {
                Some(&l) => Expression::var(l),
                None => Expression::param(self.net_param(&name)),
            };
            map.insert(v, target);
        }
        e.substitute(&mut |s| match s {
            Symbol::Var(v) => Some(map[&v].clone()),
            Symbol::Param(_) => None,
        })
    }

    /// First-order variation of `theta` in this node's own variables.
    fn lin(&mut self, theta: &Expression) -> Expression {
        let mut terms = Vec::new();
        for v in theta.free_vars() {
            let name = self.quantities[v.0 as usize].name.clone();
            let Some(&local) = self.local_index.get(&name) else { continue };
            let coeff = self.at_base(&theta.differentiate(v));
            let anchor = Expression::param(self.net_param(&name));
            terms.push(simp::mul(coeff, simp::sub(Expression::var(local), anchor)));
        }
        simp::sum(terms)
    }

    fn track(&mut self, tag: ConstraintTag, theta: &Expression) {
        if self.tracked.contains_key(&tag) {
            return;
        }
        let base_value = self.at_base(theta);
        let mut coeffs = Vec::new();
        for v in theta.free_vars() {
            let name = self.quantities[v.0 as usize].name.clone();
            let d = self.at_base(&theta.differentiate(v));
            coeffs.push((name, d));
        }
        self.tracked.insert(tag, TrackedConstraint { tag, base_value, coeffs });
    }

    fn lookup_var(&self, name: &str) -> Result<Idx, CodegenError> {
        self.env
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, i)| *i)
            .ok_or_else(|| err(format!("unbound index `{name}`")))
    }

    fn index(&self, text: &str) -> Result<Idx, CodegenError> {
        if text == "self" {
            return Ok(Idx::Node(self.me));
        }
        let mut parts = text.split('.');
        let head = parts.next().unwrap_or_default();
        let mut idx = self.lookup_var(head)?;
        for acc in parts {
            idx = match (idx, acc) {
                (Idx::Link(l) | Idx::Flow(_, l), "tx") => Idx::Node(l.tx),
                (Idx::Link(l) | Idx::Flow(_, l), "rx") => Idx::Node(l.rx),
                (Idx::Link(l) | Idx::Flow(_, l), "dest") => Idx::Node(l.dest),
                (Idx::Flow(s, _), "session") => Idx::Session(s),
                (Idx::Session(s), "source") => Idx::Node(self.session(s)?.source),
                (Idx::Session(s), "destination") => Idx::Node(self.session(s)?.destination),
                _ => return Err(err(format!("no accessor `{acc}` in `{text}`"))),
            };
        }
        Ok(idx)
    }

    fn session(&self, s: SessionId) -> Result<&crate::netsim::Session, CodegenError> {
        self.view.topology.session(s).ok_or_else(|| err(format!("unknown session {s}")))
    }

    fn node_index(&self, index: &[String]) -> Result<NodeId, CodegenError> {
        match self.index(&index[0])? {
            Idx::Node(n) => Ok(n),
            _ => Err(err(format!("`{}` is not a node", index[0]))),
        }
    }

    fn link_index(&self, index: &[String]) -> Result<Idx, CodegenError> {
        match self.index(&index[0])? {
            i @ (Idx::Link(_) | Idx::Flow(..)) => Ok(i),
            _ => Err(err(format!("`{}` is not a link", index[0]))),
        }
    }

    fn reference(&mut self, keyword: &str, index: &[String]) -> Result<Val, CodegenError> {
        let info = library::lookup(keyword).ok_or_else(|| CodegenError::UnknownKeyword(keyword.into()))?;
        let v = match info.kind {
            KeywordKind::Variable(Family::TxPower) => {
                let n = self.node_index(index)?;
                Val::Scalar(self.quantity(n, VarKind::TxPower))
            }
            KeywordKind::Variable(Family::Location) | KeywordKind::Location => {
                let n = self.node_index(index)?;
                Val::Vector(std::array::from_fn(|a| self.quantity(n, VarKind::Position(a))))
            }
            KeywordKind::Variable(Family::RouteActive) => {
                let l = match self.link_index(index)? {
                    Idx::Link(l) | Idx::Flow(_, l) => l,
                    _ => unreachable!(),
                };
                Val::Scalar(self.quantity(l.tx, VarKind::RouteIndicator { next_hop: l.rx, destination: l.dest }))
            }
            KeywordKind::Variable(Family::Rate) => {
                let s = match self.index(&index[0])? {
                    Idx::Session(s) | Idx::Flow(s, _) => s,
                    _ => return Err(err(format!("`{}` is not a session", index[0]))),
                };
                let source = self.session(s)?.source;
                Val::Scalar(self.quantity(source, VarKind::SessionRate(s)))
            }
            KeywordKind::Hardware => {
                let key = match keyword {
                    library::MIN_SNR => HwKey::MinSnr,
                    library::NOISE => HwKey::Noise,
                    _ => HwKey::Bandwidth,
                };
                Val::Scalar(Expression::param(self.param(keyword.to_string(), ParamSource::Hw(key))))
            }
            KeywordKind::Message if keyword == library::LAMBDA => {
                let tag = match self.link_index(index)? {
                    Idx::Link(l) => ConstraintTag::Sinr(l),
                    Idx::Flow(s, l) => ConstraintTag::Capacity(s, l),
                    _ => unreachable!(),
                };
                let name = format!("lambda_{}", tag.label(&self.view.topology));
                Val::Scalar(Expression::param(self.param(name, ParamSource::Lambda(tag))))
            }
            KeywordKind::Net => self.net_set(keyword, index)?,
            KeywordKind::Message | KeywordKind::Axis(_) => {
                return Err(err(format!("`{keyword}` has no value inside an expression")))
            }
        };
        Ok(v)
    }

    fn net_set(&self, keyword: &str, index: &[String]) -> Result<Val, CodegenError> {
        let me = self.me;
        let links = self.view.links();
        let flows = self.view.flows();
        let set = match keyword {
            library::LINKS => links.into_iter().map(Idx::Link).collect(),
            library::IN_LINKS => links.into_iter().filter(|l| l.rx == me).map(Idx::Link).collect(),
            library::OUT_LINKS => links.into_iter().filter(|l| l.tx == me).map(Idx::Link).collect(),
            library::FLOWS => flows.into_iter().map(|(s, l)| Idx::Flow(s, l)).collect(),
            library::IN_FLOWS => flows.into_iter().filter(|(_, l)| l.rx == me).map(|(s, l)| Idx::Flow(s, l)).collect(),
            library::INTERFERERS => {
                let l = match self.link_index(index)? {
                    Idx::Link(l) | Idx::Flow(_, l) => l,
                    _ => unreachable!(),
                };
                self.view
                    .topology
                    .nodes
                    .iter()
                    .map(|n| n.id)
                    .filter(|&j| j != l.tx && j != l.rx)
                    .map(Idx::Node)
                    .collect()
            }
            library::SESSIONS => {
                let n = self.node_index(index)?;
                self.view.topology.sessions.iter().filter(|s| s.source == n).map(|s| Idx::Session(s.id)).collect()
            }
            _ => return Err(err(format!("`{keyword}` is only available to message routing"))),
        };
        Ok(Val::Set(set))
    }

    fn scalar(&mut self, s: &Schem) -> Result<Expression, CodegenError> {
        match self.eval(s)? {
            Val::Scalar(e) => Ok(e),
            _ => Err(err(format!("`{}` is not a scalar", s.render()))),
        }
    }

    fn vector(&mut self, s: &Schem) -> Result<[Expression; 3], CodegenError> {
        match self.eval(s)? {
            Val::Vector(v) => Ok(v),
            _ => Err(err(format!("`{}` is not a location", s.render()))),
        }
    }

    fn constant(&mut self, s: &Schem) -> Result<f64, CodegenError> {
        match s {
            Schem::Num(x) => Ok(*x),
            _ => Err(err(format!("`{}` must be a literal", s.render()))),
        }
    }

    /// `MSG.lambda[c] * lin(θ)` and `MSG.lambda[c] * base(θ)` register the
    /// constraint for multiplier tracking.
    fn penalty(&mut self, a: &Schem, b: &Schem) -> Result<Option<Expression>, CodegenError> {
        let (Schem::Ref { keyword, index }, Schem::Call { name, args }) = (a, b) else { return Ok(None) };
        if keyword != library::LAMBDA || !(name == "lin" || name == "base") {
            return Ok(None);
        }
        let lambda = self.scalar(a)?;
        let tag = match self.link_index(index)? {
            Idx::Link(l) => ConstraintTag::Sinr(l),
            Idx::Flow(s, l) => ConstraintTag::Capacity(s, l),
            _ => unreachable!(),
        };
        let theta = self.scalar(&args[0])?;
        if name == "lin" {
            let lin = self.lin(&theta);
            if lin.is_zero() {
                return Ok(Some(Expression::zero()));
            }
            self.track(tag, &theta);
            if tag.link().tx == self.me {
                let exact = self.finish(&theta);
                self.outgoing.insert(tag, OutgoingLink { tag, link: tag.link(), theta: exact });
            }
            let e = Expression::mul(lambda, lin);
            self.penalties.push(PlanPenalty { tag, expr: e.clone() });
            Ok(Some(e))
        } else {
            if theta.free_vars().is_empty() {
                return Ok(Some(Expression::zero()));
            }
            self.track(tag, &theta);
            let e = Expression::mul(lambda, self.at_base(&theta));
            self.owned.push(PlanPenalty { tag, expr: e.clone() });
            Ok(Some(e))
        }
    }

    fn eval(&mut self, s: &Schem) -> Result<Val, CodegenError> {
        Ok(match s {
            Schem::Num(x) => Val::Scalar(Expression::constant(*x)),
            Schem::Ref { keyword, index } => {
                if index.is_empty() && !keyword.contains('.') {
                    return Err(err(format!("index `{keyword}` used as a value")));
                }
                self.reference(keyword, index)?
            }
            Schem::Bin(op, a, b) => {
                if *op == SchemOp::Mul {
                    if let Some(e) = self.penalty(a, b)? {
                        return Ok(Val::Scalar(e));
                    }
                }
                let (x, y) = (self.scalar(a)?, self.scalar(b)?);
                Val::Scalar(match op {
                    SchemOp::Add => Expression::add(x, y),
                    SchemOp::Sub => Expression::sub(x, y),
                    SchemOp::Mul => Expression::mul(x, y),
                    SchemOp::Div => Expression::div(x, y),
                })
            }
            Schem::Bind { var, set, body, .. } => {
                let Val::Set(items) = self.eval(set)? else {
                    return Err(err(format!("`{}` is not an index set", set.render())));
                };
                let mut terms = Vec::new();
                for item in items {
                    self.env.push((var.clone(), item));
                    let t = self.scalar(body);
                    self.env.pop();
                    let t = t?;
                    if !t.is_zero() {
                        terms.push(t);
                    }
                }
                Val::Scalar(if terms.is_empty() { Expression::zero() } else { Expression::sum(terms) })
            }
            Schem::Call { name, args } => match name.as_str() {
                "gain" => {
                    let a = self.vector(&args[0])?;
                    let b = self.vector(&args[1])?;
                    let env = crate::netsim::ChannelEnvironment {
                        g0: self.chan.0,
                        eta: self.chan.1,
                        d0: self.chan.2,
                        ..Default::default()
                    };
                    Val::Scalar(gain_expression(&a, &b, &env))
                }
                "lin" => {
                    let theta = self.scalar(&args[0])?;
                    Val::Scalar(self.lin(&theta))
                }
                "base" => {
                    let theta = self.scalar(&args[0])?;
                    Val::Scalar(self.at_base(&theta))
                }
                "sum" => {
                    let terms = args.iter().map(|a| self.scalar(a)).collect::<Result<Vec<_>, _>>()?;
                    let kept: Vec<Expression> = terms.into_iter().filter(|t| !t.is_zero()).collect();
                    Val::Scalar(if kept.is_empty() { Expression::zero() } else { Expression::sum(kept) })
                }
                "log" => Val::Scalar(Expression::log(self.scalar(&args[0])?)),
                "neg" => Val::Scalar(Expression::neg(self.scalar(&args[0])?)),
                "recip" => Val::Scalar(Expression::recip(self.scalar(&args[0])?)),
                "pow" => {
                    let k = self.constant(&args[1])?;
                    Val::Scalar(Expression::pow(self.scalar(&args[0])?, k))
                }
                "max" => {
                    let k = self.constant(&args[1])?;
                    Val::Scalar(Expression::clamp_min(self.scalar(&args[0])?, k))
                }
                "ifabove" => {
                    let k = self.constant(&args[1])?;
                    let a = self.scalar(&args[0])?;
                    let then = self.scalar(&args[2])?;
                    Val::Scalar(Expression::if_above(a, k, then))
                }
                other => return Err(err(format!("unknown function `{other}`"))),
            },
        })
    }
}

fn register(rp: &RegisterPlane, layer: LayerId, key: &str) -> Result<f64, CodegenError> {
    rp.l(layer).real(key).ok_or_else(|| err(format!("register `{key}` is not set")))
}

/// Specializes `t` for `node`, applying the role rules to decide which
/// network quantities are local variables.
pub fn instantiate(
    t: &TemplateScript,
    role: RoleAnnotation,
    node: NodeId,
    rp: &RegisterPlane,
) -> Result<ExecutablePlan, CodegenError> {
    t.validate()?;
    let view = rp.view().ok_or_else(|| err("network view is not set"))?.clone();
    let spec = view.topology.node(node).map_err(|_| err(format!("node {node} is not in the network view")))?;
    if spec.role != role.role {
        return Err(CodegenError::RoleConflict(format!("node {} is a {:?} in the network view", spec.name, spec.role)));
    }
    match (spec.hold, role.hold) {
        (true, None) => {
            return Err(CodegenError::RoleConflict(format!("hold-mode node {} has no fixed location", spec.name)))
        }
        (false, Some(_)) => {
            return Err(CodegenError::RoleConflict(format!("node {} is not in hold mode", spec.name)))
        }
        _ => {}
    }
    let chan = (
        register(rp, LayerId::Physical, keys::G0)?,
        register(rp, LayerId::Physical, keys::ETA)?,
        register(rp, LayerId::Physical, keys::D0)?,
    );

    let mut it = Interp {
        t,
        view: &view,
        me: node,
        chan,
        dt: rp.l(LayerId::Motion).real(keys::DT),
        quantities: Vec::new(),
        quantity_index: BTreeMap::new(),
        locals: Vec::new(),
        local_index: BTreeMap::new(),
        params: Vec::new(),
        param_index: BTreeMap::new(),
        env: Vec::new(),
        penalties: Vec::new(),
        owned: Vec::new(),
        tracked: BTreeMap::new(),
        outgoing: BTreeMap::new(),
    };

    let mut kinds = vec![VarKind::TxPower, VarKind::Position(0), VarKind::Position(1), VarKind::Position(2)];
    let mut groups = Vec::new();
    for g in view.groups.iter().filter(|g| g.node == node) {
        for &h in &g.candidates {
            kinds.push(VarKind::RouteIndicator { next_hop: h, destination: g.destination });
        }
    }
    for s in view.topology.sessions.iter().filter(|s| s.source == node) {
        kinds.push(VarKind::SessionRate(s.id));
    }
    for kind in kinds {
        if !it.is_variable(node, &kind) {
            continue;
        }
        let keyword = match kind {
            VarKind::TxPower => library::TX_POWER,
            VarKind::Position(a) => library::AXIS_KEYWORDS[a],
            VarKind::RouteIndicator { .. } => library::ROUTE_ACTIVE,
            VarKind::SessionRate(_) => library::RATE,
        };
        let (lo, hi) = t.bound(keyword).ok_or_else(|| err(format!("no bounds for `{keyword}`")))?;
        let name = value_name(&view.topology, node, &kind);
        let id = VarId(it.locals.len() as u32);
        it.local_index.insert(name.clone(), id);
        let width = it.width(node, &kind);
        it.locals.push(LocalVar { name, kind, lo, hi, width });
    }
    for g in view.groups.iter().filter(|g| g.node == node) {
        let candidates: Vec<(NodeId, VarId)> = g
            .candidates
            .iter()
            .filter_map(|&h| {
                let name = value_name(&view.topology, node, &VarKind::RouteIndicator { next_hop: h, destination: g.destination });
                it.local_index.get(&name).map(|&v| (h, v))
            })
            .collect();
        if !candidates.is_empty() {
            groups.push(PlanRouteGroup { destination: g.destination, candidates });
        }
    }

    let (share_schem, gamma_schem) = match &t.objective {
        Schem::Bin(SchemOp::Sub, a, b) if b.mentions(library::LAMBDA) => (a.as_ref(), Some(b.as_ref())),
        other => (other, None),
    };
    let share_raw = it.scalar(share_schem)?;
    let share = it.finish(&share_raw);
    let gamma = match gamma_schem {
        Some(g) => {
            let raw = it.scalar(g)?;
            it.finish(&raw)
        }
        None => Expression::zero(),
    };
    let objective = if gamma.is_zero() { share.clone() } else { Expression::sub(share.clone(), gamma) };

    let scale = match t.header.objective {
        ObjectiveTemplate::MinPower => t.bound(library::TX_POWER).map_or(1.0, |(lo, hi)| hi - lo),
        ObjectiveTemplate::MaxLogRate => {
            let b = register(rp, LayerId::Physical, keys::BANDWIDTH)?;
            t.bound(library::RATE).map_or(1.0, |(lo, hi)| (hi - lo) / b)
        }
    };
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut prox = Vec::new();
    let locals = it.locals.clone();
    for (i, v) in locals.iter().enumerate() {
        if matches!(v.kind, VarKind::RouteIndicator { .. }) || v.hi <= v.lo {
            continue;
        }
        let anchor = Expression::param(it.net_param(&v.name));
        let d = Expression::div(Expression::sub(Expression::var(VarId(i as u32)), anchor), Expression::constant(v.width));
        prox.push(Expression::mul(d.clone(), d));
    }
    let solve_objective = if prox.is_empty() {
        objective.clone()
    } else {
        let weight = 0.5 * scale * t.header.proximal;
        Expression::add(objective.clone(), Expression::mul(Expression::constant(weight), Expression::sum(prox)))
    };

    let coordinated = t.class_of(library::REMOTE_POINT) == Some(DeclClass::Msg);
    let others: Vec<NodeId> = view.topology.nodes.iter().map(|n| n.id).filter(|&n| n != node).collect();
    let routing = if coordinated {
        MessageRouting { send_to: others.clone(), expect_from: others }
    } else {
        MessageRouting::default()
    };

    Ok(ExecutablePlan {
        node,
        annotation: role,
        header: t.header.clone(),
        scale,
        locals,
        params: it.params,
        quantities: it.quantities,
        share,
        penalties: it.penalties,
        owned: it.owned,
        objective,
        solve_objective,
        tracked: it.tracked.into_values().collect(),
        outgoing: it.outgoing.into_values().collect(),
        groups,
        routing,
    })
}
