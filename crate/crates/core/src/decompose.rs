//! Coupling-graph analysis and Lagrangian relaxation of the NCP into
//! per-node subproblems.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::unionfind::UnionFind;
use thiserror::Error;

use crate::expr::{simp, AffineExpression, Binding, Env, ExprError, Expression, ParamId, VarId};
use crate::ncp::{ConstraintTag, LayerId, NetworkControlProblem};
use crate::netsim::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("linearization failed: {0}")]
    Linearization(#[from] ExprError),
    #[error("no multiplier for constraint {0:?}")]
    UnknownTag(ConstraintTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    /// Endpoints owned by different nodes.
    Horizontal,
    /// Same owner, different layers.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub var: VarId,
    pub owner: NodeId,
    pub layer: LayerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingEdge {
    pub a: VarId,
    pub b: VarId,
    pub tag: ConstraintTag,
    /// `None` for two variables of the same node and layer.
    pub class: Option<EdgeClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<CouplingEdge>,
}

impl CouplingGraph {
    /// Connected components as sorted variable lists.
    pub fn components(&self) -> Vec<Vec<VarId>> {
        let n = self.vertices.len();
        let mut uf = UnionFind::<usize>::new(n);
        for e in &self.edges {
            uf.union(e.a.0 as usize, e.b.0 as usize);
        }
        let mut groups: BTreeMap<usize, Vec<VarId>> = BTreeMap::new();
        for v in &self.vertices {
            groups.entry(uf.find(v.var.0 as usize)).or_default().push(v.var);
        }
        let mut out: Vec<Vec<VarId>> = groups.into_values().collect();
        out.sort();
        out
    }

    pub fn edges_between(&self, a: VarId, b: VarId) -> impl Iterator<Item = &CouplingEdge> {
        let key = (a.min(b), a.max(b));
        self.edges.iter().filter(move |e| (e.a, e.b) == key)
    }
}

/// One vertex per variable and a clique over each constraint's variables.
pub fn build_coupling_graph(p: &NetworkControlProblem) -> CouplingGraph {
    let vertices = p
        .vars
        .iter()
        .map(|v| Vertex { var: v.id, owner: v.owner, layer: v.layer })
        .collect();
    let mut edges = Vec::new();
    for c in &p.constraints {
        let vars: Vec<VarId> = c.expr.free_vars().into_iter().collect();
        for (i, &a) in vars.iter().enumerate() {
            for &b in &vars[i + 1..] {
                let (va, vb) = (p.var(a), p.var(b));
                let class = if va.owner != vb.owner {
                    Some(EdgeClass::Horizontal)
                } else if va.layer != vb.layer {
                    Some(EdgeClass::Vertical)
                } else {
                    None
                };
                edges.push(CouplingEdge { a, b, tag: c.tag, class });
            }
        }
    }
    CouplingGraph { vertices, edges }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `α₀ / t`.
    Diminishing(f64),
}

impl StepSchedule {
    /// Step size for iteration `t ≥ 1`.
    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::Diminishing(a) => a / t.max(1) as f64,
        }
    }

    pub fn alpha0(&self) -> f64 {
        match *self {
            StepSchedule::Constant(a) | StepSchedule::Diminishing(a) => a,
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Diminishing(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiplierTable {
    pub lambda: BTreeMap<ConstraintTag, f64>,
    pub t: u64,
}

impl MultiplierTable {
    pub fn zeros(tags: impl IntoIterator<Item = ConstraintTag>) -> Self {
        Self { lambda: tags.into_iter().map(|t| (t, 0.0)).collect(), t: 0 }
    }

    pub fn get(&self, tag: &ConstraintTag) -> f64 {
        self.lambda.get(tag).copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.lambda.values().fold(0.0, |m, &x| m.max(x))
    }
}

/// Projected subgradient step `λ ← max(0, λ − α(t)·slack)` with `t` the
/// incremented counter.
pub fn multiplier_update(
    m: &MultiplierTable,
    slack: &BTreeMap<ConstraintTag, f64>,
    sched: StepSchedule,
) -> Result<MultiplierTable, DecomposeError> {
    for tag in slack.keys() {
        if !m.lambda.contains_key(tag) {
            return Err(DecomposeError::UnknownTag(*tag));
        }
    }
    let t = m.t + 1;
    let alpha = sched.alpha(t);
    let lambda = m
        .lambda
        .iter()
        .map(|(tag, &l)| {
            let next = match slack.get(tag) {
                Some(s) => (l - alpha * s).max(0.0),
                None => l,
            };
            (*tag, next)
        })
        .collect();
    Ok(MultiplierTable { lambda, t })
}

/// `λ_c · Σ_v a_cv·(v − b_v)` restricted to one node's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub tag: ConstraintTag,
    pub lambda: ParamId,
    pub coeffs: Vec<(VarId, f64)>,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKey {
    Lambda(ConstraintTag),
    /// Current value of a network variable.
    Value(VarId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub owner: NodeId,
    pub vars: Vec<VarId>,
    /// The node's part of the NCP objective.
    pub share: Expression,
    pub penalties: Vec<Penalty>,
    /// `(tag, λ parameter, θ at the expansion point)` for constraints whose
    /// multiplier this node keeps.
    pub owned: Vec<(ConstraintTag, ParamId, f64)>,
    /// `share − Γ`.
    pub objective: Expression,
    pub incoming: Vec<MessageKey>,
    pub outgoing: Vec<MessageKey>,
}

impl Subproblem {
    /// Γ_i as an expression over local variables and multiplier parameters.
    pub fn gamma(&self) -> Expression {
        let mut terms = Vec::new();
        for pen in &self.penalties {
            let lin = simp::sum(
                pen.coeffs
                    .iter()
                    .zip(&pen.point)
                    .map(|(&(v, a), &b)| {
                        simp::mul(Expression::constant(a), simp::sub(Expression::var(v), Expression::constant(b)))
                    })
                    .collect(),
            );
            terms.push(simp::mul(Expression::param(pen.lambda), lin));
        }
        for &(_, lambda, theta) in &self.owned {
            terms.push(simp::mul(Expression::param(lambda), Expression::constant(theta)));
        }
        simp::sum(terms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub subproblems: Vec<Subproblem>,
    pub multipliers: MultiplierTable,
    /// θ̃ for every dualized constraint.
    pub linearized: BTreeMap<ConstraintTag, AffineExpression>,
    /// Multiplier parameters, numbered after the NCP's own parameters.
    pub lambda_params: BTreeMap<ConstraintTag, ParamId>,
    /// Value of the objective terms that depend on no variable.
    pub separable_constant: f64,
    pub base: Binding,
    pub schedule: StepSchedule,
}

impl Relaxation {
    pub fn subproblem(&self, node: NodeId) -> Option<&Subproblem> {
        self.subproblems.iter().find(|s| s.owner == node)
    }

    /// Binding of the multiplier parameters to the values in `m`.
    pub fn bind_multipliers(&self, m: &MultiplierTable, b: &mut Binding) {
        for (tag, &pid) in &self.lambda_params {
            b.set_param(pid, m.get(tag));
        }
    }

    /// `Σ_c λ_c · θ̃_c` at the variable values in `env`.
    pub fn weighted_slack(&self, m: &MultiplierTable, env: &impl Env) -> Result<f64, DecomposeError> {
        let mut acc = 0.0;
        for (tag, lin) in &self.linearized {
            acc += m.get(tag) * lin.evaluate(env)?;
        }
        Ok(acc)
    }

    /// Slack of every linearized constraint at `env`.
    pub fn slacks(&self, env: &impl Env) -> Result<BTreeMap<ConstraintTag, f64>, DecomposeError> {
        self.linearized
            .iter()
            .map(|(tag, lin)| Ok((*tag, lin.evaluate(env)?)))
            .collect()
    }
}

/// Linearizes every constraint with a free variable at `base` and splits the
/// Lagrangian into one subproblem per node.
pub fn relax(p: &NetworkControlProblem, base: &Binding, sched: StepSchedule) -> Result<Relaxation, DecomposeError> {
    let mut linearized = BTreeMap::new();
    let mut lambda_params = BTreeMap::new();
    let first = p.params.len() as u32;
    for c in &p.constraints {
        if c.expr.free_vars().is_empty() {
            continue;
        }
        let lin = c.expr.linearize_at(base)?;
        lambda_params.insert(c.tag, ParamId(first + lambda_params.len() as u32));
        linearized.insert(c.tag, lin);
    }

    let mut separable_constant = 0.0;
    for t in &p.objective_terms {
        if t.owner.is_none() {
            separable_constant += t.expr.evaluate(base)?;
        }
    }

    let subproblems = p
        .topology
        .nodes
        .iter()
        .map(|n| build_subproblem(p, n.id, &linearized, &lambda_params))
        .collect();

    Ok(Relaxation {
        subproblems,
        multipliers: MultiplierTable::zeros(linearized.keys().copied()),
        linearized,
        lambda_params,
        separable_constant,
        base: base.clone(),
        schedule: sched,
    })
}

fn build_subproblem(
    p: &NetworkControlProblem,
    owner: NodeId,
    linearized: &BTreeMap<ConstraintTag, AffineExpression>,
    lambda_params: &BTreeMap<ConstraintTag, ParamId>,
) -> Subproblem {
    let vars = p.vars_of(owner);
    let mine: BTreeSet<VarId> = vars.iter().copied().collect();
    let share = simp::sum(
        p.objective_terms
            .iter()
            .filter(|t| t.owner == Some(owner))
            .map(|t| t.expr.clone())
            .collect(),
    );

    let mut penalties = Vec::new();
    let mut owned = Vec::new();
    let mut incoming = BTreeSet::new();
    let mut outgoing: BTreeSet<MessageKey> = vars.iter().map(|&v| MessageKey::Value(v)).collect();
    for (tag, lin) in linearized {
        let lambda = lambda_params[tag];
        let is_owner = tag.owner() == owner;
        if is_owner {
            owned.push((*tag, lambda, lin.constant));
            outgoing.insert(MessageKey::Lambda(*tag));
        }
        let (coeffs, point): (Vec<(VarId, f64)>, Vec<f64>) = lin
            .coeffs
            .iter()
            .filter(|(v, _)| mine.contains(v))
            .map(|(&v, &a)| ((v, a), lin.point[&v]))
            .unzip();
        if coeffs.is_empty() && !is_owner {
            continue;
        }
        if !is_owner {
            incoming.insert(MessageKey::Lambda(*tag));
        }
        for v in lin.coeffs.keys().filter(|v| !mine.contains(v)) {
            incoming.insert(MessageKey::Value(*v));
        }
        if !coeffs.is_empty() {
            penalties.push(Penalty { tag: *tag, lambda, coeffs, point });
        }
    }

    let mut sp = Subproblem {
        owner,
        vars,
        share,
        penalties,
        owned,
        objective: Expression::zero(),
        incoming: incoming.into_iter().collect(),
        outgoing: outgoing.into_iter().collect(),
    };
    sp.objective = simp::sub(sp.share.clone(), sp.gamma());
    sp
}

/// Re-expands every constraint at `base`, keeping the partition and the
/// current multipliers.
pub fn relinearize(p: &NetworkControlProblem, r: &Relaxation, base: &Binding) -> Result<Relaxation, DecomposeError> {
    let mut next = relax(p, base, r.schedule)?;
    for (tag, l) in next.multipliers.lambda.iter_mut() {
        *l = r.multipliers.get(tag);
    }
    next.multipliers.t = r.multipliers.t;
    Ok(next)
}

/// Lagrangian dual value `min_v objective(v) − Σ λ·θ̃(v)` over the variable
/// boxes, for objectives that are affine in the variables. Each coordinate of
/// an affine function is minimized independently at one end of its box.
pub fn affine_dual_value(p: &NetworkControlProblem, r: &Relaxation, m: &MultiplierTable) -> Result<f64, DecomposeError> {
    let obj = p.objective.linearize_at(&r.base)?;
    let mut constant = obj.constant;
    let mut slope: BTreeMap<VarId, f64> = BTreeMap::new();
    for (v, a) in &obj.coeffs {
        constant -= a * obj.point[v];
        *slope.entry(*v).or_default() += a;
    }
    for (tag, lin) in &r.linearized {
        let l = m.get(tag);
        constant -= l * lin.constant;
        for (v, a) in &lin.coeffs {
            constant += l * a * lin.point[v];
            *slope.entry(*v).or_default() -= l * a;
        }
    }
    let mut value = constant;
    for (v, s) in slope {
        let d = p.var(v);
        value += (s * d.lo).min(s * d.hi);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(i: u32) -> ConstraintTag {
        ConstraintTag::Sinr(crate::ncp::Link { tx: NodeId(i), rx: NodeId(i + 1), dest: NodeId(9) })
    }

    fn table(l: f64) -> MultiplierTable {
        MultiplierTable { lambda: [(tag(0), l)].into(), t: 0 }
    }

    #[test]
    fn multiplier_steps() {
        let s = StepSchedule::Constant(0.1);
        let up = |l: f64, slack: f64| multiplier_update(&table(l), &[(tag(0), slack)].into(), s).unwrap().get(&tag(0));
        assert!((up(0.5, 2.0) - 0.3).abs() < 1e-15);
        assert_eq!(up(0.0, 5.0), 0.0);
        assert!((up(0.1, -3.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let r = multiplier_update(&table(0.0), &[(tag(3), 1.0)].into(), StepSchedule::default());
        assert_eq!(r, Err(DecomposeError::UnknownTag(tag(3))));
    }

    #[test]
    fn diminishing_schedule() {
        let s = StepSchedule::Diminishing(0.5);
        assert_eq!(s.alpha(1), 0.5);
        assert_eq!(s.alpha(4), 0.125);
        assert!(s.alpha(1_000_000) > 0.0);
    }
}
