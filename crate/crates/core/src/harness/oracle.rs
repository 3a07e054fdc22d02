//! Exhaustive centralized reference solver for small instances.

use std::collections::BTreeMap;

use crate::expr::CompiledExpr;
use crate::ncp::{construct_ncp, route_groups, LayerId, OperatingPoint, VarKind};
use crate::netsim::{NodeId, Role};

use super::config::ScenarioConfig;
use super::HarnessError;

/// Instances above these sizes are refused.
pub const MAX_NODES: usize = 5;
pub const MAX_VARS_PER_NODE: usize = 3;
pub const MAX_GRID_POINTS: u64 = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Best objective over the grid (the NCP objective, e.g. total power).
    pub objective: f64,
    /// Chosen next hop per (node, destination).
    pub next_hops: BTreeMap<(NodeId, NodeId), NodeId>,
    /// Grid values of the searched variables, by canonical name.
    pub values: BTreeMap<String, f64>,
    /// Number of grid points evaluated.
    pub evaluated: u64,
    /// Sum of grid steps over the searched variables: the continuous
    /// optimum lies no more than this below `objective` when the objective
    /// is a plain sum of them.
    pub grid_slack: f64,
}

fn combinations(choices: &[Vec<NodeId>]) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new()];
    for c in choices {
        let mut next = Vec::with_capacity(out.len() * c.len());
        for prefix in &out {
            for &h in c {
                let mut v = prefix.clone();
                v.push(h);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Grid search over every continuous non-route variable with `k` points per
/// axis, for every joint route choice. Positions must be frozen and
/// destination powers are held at zero.
pub fn centralized_oracle(cfg: &ScenarioConfig, k: usize) -> Result<OracleSolution, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Config("grid needs at least two points per axis".into()));
    }
    let topo = cfg.topology(cfg.seed)?;
    let env = cfg.env(cfg.seed);
    let directive = cfg.directive.to_directive(env.bandwidth_hz)?;
    if topo.nodes.len() > MAX_NODES {
        return Err(HarnessError::TooLarge(format!("{} nodes, at most {MAX_NODES}", topo.nodes.len())));
    }
    if directive.optimizes(LayerId::Motion) {
        return Err(HarnessError::TooLarge("positions must be frozen".into()));
    }
    let base = OperatingPoint::initial(&topo, &directive, &env)?;
    let groups = route_groups(&topo, &base.positions, &env);
    let choices: Vec<Vec<NodeId>> = groups.iter().map(|g| g.candidates.clone()).collect();

    let mut best: Option<OracleSolution> = None;
    let mut evaluated = 0u64;
    for combo in combinations(&choices) {
        let mut op = base.clone();
        for (g, &h) in groups.iter().zip(&combo) {
            op.next_hops.insert((g.node, g.destination), h);
        }
        let p = construct_ncp(&directive, &topo, &env, &op)?;
        let binding = p.binding_at(&op);

        let mut vars: Vec<f64> = p.vars.iter().map(|v| binding.vars[&v.id]).collect();
        let params: Vec<f64> = p.params.iter().map(|q| q.value).collect();
        let mut axes = Vec::new();
        let mut per_node: BTreeMap<NodeId, usize> = BTreeMap::new();
        for v in &p.vars {
            match v.kind {
                VarKind::RouteIndicator { .. } => {}
                VarKind::TxPower if p.topology.nodes[v.owner.index()].role == Role::Destination => {
                    vars[v.id.0 as usize] = 0.0;
                }
                _ => {
                    *per_node.entry(v.owner).or_default() += 1;
                    axes.push((v.id.0 as usize, v.lo, v.hi));
                }
            }
        }
        if let Some((n, c)) = per_node.iter().find(|(_, &c)| c > MAX_VARS_PER_NODE) {
            return Err(HarnessError::TooLarge(format!("node {n} has {c} searched variables, at most {MAX_VARS_PER_NODE}")));
        }
        let points = (k as u64).checked_pow(axes.len() as u32).unwrap_or(u64::MAX);
        if points.saturating_mul(choices.len().max(1) as u64) > MAX_GRID_POINTS {
            return Err(HarnessError::TooLarge(format!("{points} grid points per route choice")));
        }
        let objective = CompiledExpr::new(&p.objective);
        let constraints: Vec<CompiledExpr> = p.constraints.iter().map(|c| CompiledExpr::new(&c.expr)).collect();
        let step: Vec<f64> = axes.iter().map(|&(_, lo, hi)| (hi - lo) / (k - 1) as f64).collect();

        let eval = |idx: u64| -> Option<(f64, u64)> {
            let mut x = vars.clone();
            let mut rest = idx;
            for (a, &(i, lo, _)) in axes.iter().enumerate() {
                x[i] = lo + (rest % k as u64) as f64 * step[a];
                rest /= k as u64;
            }
            let mut stack = Vec::new();
            for c in &constraints {
                let v = c.eval(&x, &params, &mut stack);
                if !(v >= 0.0) {
                    return None;
                }
            }
            let f = objective.eval(&x, &params, &mut stack);
            f.is_finite().then_some((f, idx))
        };
        let pick = |a: Option<(f64, u64)>, b: Option<(f64, u64)>| match (a, b) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        };
        #[cfg(feature = "parallel")]
        let found = {
            use rayon::prelude::*;
            (0..points).into_par_iter().map(eval).reduce(|| None, pick)
        };
        #[cfg(not(feature = "parallel"))]
        let found = (0..points).map(eval).fold(None, pick);
        evaluated += points;

        let Some((f, idx)) = found else { continue };
        if best.as_ref().is_some_and(|b| b.objective <= f) {
            continue;
        }
        let mut values = BTreeMap::new();
        let mut rest = idx;
        for (a, &(i, lo, _)) in axes.iter().enumerate() {
            values.insert(p.vars[i].name.clone(), lo + (rest % k as u64) as f64 * step[a]);
            rest /= k as u64;
        }
        let next_hops = groups.iter().zip(&combo).map(|(g, &h)| ((g.node, g.destination), h)).collect();
        best = Some(OracleSolution { objective: f, next_hops, values, evaluated: 0, grid_slack: step.iter().sum() });
    }
    let mut best = best.ok_or(HarnessError::Infeasible)?;
    best.evaluated = evaluated;
    Ok(best)
}
