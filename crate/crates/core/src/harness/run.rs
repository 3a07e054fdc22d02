//! Scenario execution and metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::netsim::{ExecMode, NodeId, SessionId, SimulationState};

use super::config::{EventConfig, ScenarioConfig, Scheme};
use super::HarnessError;

/// One CSV row: a node's state at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub round: u64,
    pub node: String,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Next hop per carried destination, `|`-separated; `-` when idle.
    pub next_hop: String,
    /// Session sourced by the node, empty otherwise.
    pub session_id: String,
    pub rate_setpoint_bps: f64,
    pub delivered_bps: f64,
    pub lambda_max: f64,
    pub converged_flag: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub rounds: u64,
    /// Mean delivered rate per session over the final quarter of the run.
    pub session_throughput: BTreeMap<u32, f64>,
    /// Mean of `session_throughput` over all configured sessions.
    pub throughput_bps: f64,
    /// Mean total power over the final quarter of the run.
    pub total_power_mw: f64,
    /// First round from which every node stays converged until the next
    /// event or the end.
    pub convergence_round: Option<u64>,
    pub decomposition_time_s: f64,
}

impl Summary {
    /// `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario = {}", self.scenario);
        let _ = writeln!(out, "scheme = {}", self.scheme.id());
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "rounds = {}", self.rounds);
        let _ = writeln!(out, "throughput_bps = {}", self.throughput_bps);
        for (s, v) in &self.session_throughput {
            let _ = writeln!(out, "throughput_bps.session_{s} = {v}");
        }
        let _ = writeln!(out, "total_power_mw = {}", self.total_power_mw);
        match self.convergence_round {
            Some(r) => writeln!(out, "convergence_round = {r}"),
            None => writeln!(out, "convergence_round = none"),
        }
        .ok();
        let _ = writeln!(out, "decomposition_time_s = {}", self.decomposition_time_s);
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    /// Rounds at which events fired.
    pub event_rounds: Vec<u64>,
    pub final_state: SimulationState,
}

impl RunMetrics {
    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
    }

    /// Total power per round, from the rows.
    pub fn power_series(&self) -> Vec<f64> {
        series(&self.rows, self.summary.rounds, |r| Some(r.power_mw))
    }

    /// Delivered rate of session `s` per round, from the source rows.
    pub fn session_series(&self, s: u32) -> Vec<f64> {
        let key = s.to_string();
        series(&self.rows, self.summary.rounds, |r| (r.session_id == key).then_some(r.delivered_bps))
    }

    pub fn converged_series(&self) -> Vec<bool> {
        let mut out = vec![true; self.summary.rounds as usize];
        for r in &self.rows {
            out[(r.round - 1) as usize] &= r.converged_flag == 1;
        }
        out
    }
}

fn series(rows: &[MetricsRow], rounds: u64, f: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<f64> {
    let mut out = vec![0.0; rounds as usize];
    for r in rows {
        if let Some(v) = f(r) {
            out[(r.round - 1) as usize] += v;
        }
    }
    out
}

fn collect_rows(sim: &SimulationState, out: &mut Vec<MetricsRow>) {
    let topo = &sim.topology;
    let m = &sim.measurement;
    let positions = sim.positions();
    let powers = sim.powers();
    for n in &topo.nodes {
        let id = n.id;
        let mut hops = Vec::new();
        for d in topo.destinations() {
            let carries = m.paths.values().any(|p| p.last() == Some(&d) && p[..p.len() - 1].contains(&id));
            if carries {
                if let Some(h) = sim.next_hop(id, d) {
                    hops.push(topo.name(h).to_string());
                }
            }
        }
        let own = topo.sessions.iter().find(|s| s.source == id);
        let through: f64 = m
            .paths
            .iter()
            .filter(|(_, p)| p.contains(&id))
            .map(|(s, _)| m.delivered.get(s).copied().unwrap_or(0.0))
            .sum();
        let (session_id, rate, delivered) = match own {
            Some(s) => (s.id.to_string(), sim.rate(s.id), m.delivered.get(&s.id).copied().unwrap_or(0.0)),
            None => (String::new(), 0.0, through),
        };
        // Adding zero turns -0.0 into 0.0 in the CSV text.
        out.push(MetricsRow {
            round: sim.round,
            node: n.name.clone(),
            power_mw: powers[id.index()] + 0.0,
            x: positions[id.index()].x + 0.0,
            y: positions[id.index()].y + 0.0,
            z: positions[id.index()].z + 0.0,
            next_hop: if hops.is_empty() { "-".into() } else { hops.join("|") },
            session_id,
            rate_setpoint_bps: rate + 0.0,
            delivered_bps: delivered + 0.0,
            lambda_max: sim.lambda_max(id) + 0.0,
            converged_flag: u8::from(sim.converged(id)),
        });
    }
}

/// Summary statistics computed from the rows alone.
pub fn summarize(cfg: &ScenarioConfig, scheme: Scheme, seed: u64, rows: &[MetricsRow], events: &[u64]) -> Summary {
    let rounds = cfg.rounds;
    let start = rounds - rounds / 4;
    let tail = |r: &MetricsRow| r.round > start;
    let window = (rounds - start).max(1) as f64;
    let mut session_throughput = BTreeMap::new();
    for s in &cfg.sessions {
        let key = s.id.to_string();
        let total: f64 = rows.iter().filter(|r| tail(r) && r.session_id == key).map(|r| r.delivered_bps).sum();
        session_throughput.insert(s.id, total / window + 0.0);
    }
    let throughput_bps = if session_throughput.is_empty() {
        0.0
    } else {
        session_throughput.values().sum::<f64>() / session_throughput.len() as f64
    };
    let total_power_mw = rows.iter().filter(|r| tail(r)).map(|r| r.power_mw).sum::<f64>() / window + 0.0;

    let mut converged = vec![true; rounds as usize];
    for r in rows {
        converged[(r.round - 1) as usize] &= r.converged_flag == 1;
    }
    let phase_start = events.iter().copied().filter(|&e| e <= rounds).max().unwrap_or(1);
    let mut convergence_round = None;
    for r in (phase_start..=rounds).rev() {
        if converged[(r - 1) as usize] {
            convergence_round = Some(r);
        } else {
            break;
        }
    }
    Summary {
        scenario: cfg.name.clone(),
        scheme,
        seed,
        rounds,
        session_throughput,
        throughput_bps,
        total_power_mw,
        convergence_round,
        decomposition_time_s: 0.0,
    }
}

/// Runs the scenario under `scheme` with the given seed.
pub fn run_scenario(cfg: &ScenarioConfig, scheme: Scheme, seed: u64, mode: ExecMode) -> Result<RunMetrics, HarnessError> {
    let topo = cfg.topology(seed)?;
    let env = cfg.env(seed);
    let directive = cfg.directive.to_directive(env.bandwidth_hz)?;
    let mut sim = SimulationState::new(&topo, &env, &directive)?;
    sim.mode = mode;
    let opts = cfg.emit_options(scheme);
    let dcfg = cfg.decision_config();
    let mut decomposition_time_s = 0.0;
    let mut dispatch = |sim: &mut SimulationState| -> Result<(), HarnessError> {
        let t = Instant::now();
        sim.dispatch(opts.as_ref(), dcfg)?;
        decomposition_time_s += t.elapsed().as_secs_f64();
        Ok(())
    };
    dispatch(&mut sim)?;

    let mut rows = Vec::with_capacity((cfg.rounds as usize) * topo.nodes.len());
    let mut event_rounds = Vec::new();
    for round in 1..=cfg.rounds {
        let due: Vec<&EventConfig> = cfg.events.iter().filter(|e| e.round() == round).collect();
        if !due.is_empty() {
            for e in due {
                match e {
                    EventConfig::TerminateSession { session, .. } => sim.terminate_session(SessionId(*session))?,
                    EventConfig::Switch { directive, .. } => {
                        let mut d = directive.to_directive(env.bandwidth_hz)?;
                        d.roles = sim.directive.roles.clone();
                        sim.directive = d;
                    }
                }
            }
            dispatch(&mut sim)?;
            event_rounds.push(round);
        }
        sim.step_round();
        collect_rows(&sim, &mut rows);
    }
    let mut summary = summarize(cfg, scheme, seed, &rows, &event_rounds);
    summary.decomposition_time_s = decomposition_time_s;
    Ok(RunMetrics { rows, summary, event_rounds, final_state: sim })
}

/// Throughput statistics of one scheme across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeStats {
    pub scheme: Scheme,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub stats: Vec<SchemeStats>,
    /// Relative gain of the coordinated scheme over the best other scheme,
    /// when both are present.
    pub gain: Option<f64>,
}

impl Comparison {
    pub fn stats(&self, s: Scheme) -> Option<&SchemeStats> {
        self.stats.iter().find(|x| x.scheme == s)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seeds = {}", self.seeds.len());
        for s in &self.stats {
            let _ = writeln!(out, "{}.mean_throughput_bps = {}", s.scheme.id(), s.mean);
            let _ = writeln!(out, "{}.std_throughput_bps = {}", s.scheme.id(), s.std);
        }
        if let Some(g) = self.gain {
            let _ = writeln!(out, "swarm.gain_over_best_baseline = {g}");
        }
        out
    }
}

/// Runs every scheme on seeds `cfg.seed .. cfg.seed + n` and tabulates the
/// summary throughput.
pub fn compare_schemes(cfg: &ScenarioConfig, schemes: &[Scheme], n: u64, mode: ExecMode) -> Result<Comparison, HarnessError> {
    let seeds: Vec<u64> = (0..n.max(1)).map(|i| cfg.seed + i).collect();
    let jobs: Vec<(Scheme, u64)> = schemes.iter().flat_map(|&s| seeds.iter().map(move |&k| (s, k))).collect();
    let run = |&(s, k): &(Scheme, u64)| run_scenario(cfg, s, k, ExecMode::Sequential).map(|m| m.summary.throughput_bps);
    let results: Vec<f64> = match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            jobs.par_iter().map(run).collect::<Result<_, _>>()?
        }
        _ => jobs.iter().map(run).collect::<Result<_, _>>()?,
    };
    let mut stats = Vec::new();
    for (i, &s) in schemes.iter().enumerate() {
        let per_seed = results[i * seeds.len()..(i + 1) * seeds.len()].to_vec();
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per_seed.len() as f64;
        stats.push(SchemeStats { scheme: s, per_seed, mean, std: var.sqrt() });
    }
    let gain = stats.iter().find(|s| s.scheme == Scheme::Swarm).and_then(|sw| {
        let best = stats.iter().filter(|s| s.scheme != Scheme::Swarm).map(|s| s.mean).fold(None, |a: Option<f64>, m| {
            Some(a.map_or(m, |a| a.max(m)))
        })?;
        (best > 0.0).then(|| (sw.mean - best) / best)
    });
    Ok(Comparison { seeds, stats, gain })
}

/// Index of a node by name.
pub fn node_id(cfg: &ScenarioConfig, name: &str) -> Option<NodeId> {
    cfg.nodes.iter().position(|n| n.name == name).map(|i| NodeId(i as u32))
}
