//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmctl_core::codegen::{emit_template, parse_template, EmitOptions};
use swarmctl_core::decompose::{multiplier_update, relax, MultiplierTable, StepSchedule};
use swarmctl_core::expr::{Binding, Env};
use swarmctl_core::harness::{centralized_oracle, compare_schemes, run_scenario, RunMetrics, ScenarioConfig, Scheme};
use swarmctl_core::ncp::{ConstraintTag, Link, NetworkControlProblem, ObjectiveTemplate};
use swarmctl_core::netsim::{model_sinr, ExecMode, NodeId, SimulationState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(limit_s: f64, t: Duration) -> bool {
    t.as_secs_f64() < limit_s
}

fn random_binding(p: &NetworkControlProblem, rng: &mut ChaCha8Rng) -> Binding {
    let mut b = p.param_binding();
    for v in &p.vars {
        b.set_var(v.id, rng.gen_range(v.lo..=v.hi));
    }
    b
}

fn math_core() -> Outcome {
    let start = Instant::now();
    let mut worst_lin = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_partition = 0.0f64;
    for seed in 0..100u64 {
        let objective = if seed % 2 == 0 { ObjectiveTemplate::MaxLogRate } else { ObjectiveTemplate::MinPower };
        let b = common::random_instance(seed, objective);
        let p = &b.ncp;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
        let at = random_binding(p, &mut rng);
        let exprs = std::iter::once(&p.objective).chain(p.constraints.iter().map(|c| &c.expr));
        for e in exprs {
            let f = e.evaluate(&at).unwrap();
            let lin = e.linearize_at(&at).unwrap();
            worst_lin = worst_lin.max((lin.evaluate(&at).unwrap() - f).abs());
            if seed < 20 {
                for v in &p.vars {
                    let x = at.var(v.id).unwrap();
                    let h = 1e-6 * (1.0 + x.abs());
                    let mut hi = at.clone();
                    hi.set_var(v.id, x + h);
                    let mut lo = at.clone();
                    lo.set_var(v.id, x - h);
                    let numeric = (e.evaluate(&hi).unwrap() - e.evaluate(&lo).unwrap()) / (2.0 * h);
                    let symbolic = e.differentiate(v.id).evaluate(&at).unwrap();
                    // Cancellation in the difference bounds what the
                    // numeric side can resolve.
                    let floor = 1e-9 * (1.0 + f.abs()) / h;
                    let scale = symbolic.abs().max(numeric.abs());
                    if scale > floor {
                        worst_grad = worst_grad.max((symbolic - numeric).abs() / scale);
                    }
                }
            }
        }

        let r = relax(p, &p.binding_at(&b.op), StepSchedule::default()).unwrap();
        let m = MultiplierTable { lambda: r.linearized.keys().map(|&t| (t, rng.gen_range(0.0..5.0))).collect(), t: 0 };
        let mut at = random_binding(p, &mut rng);
        r.bind_multipliers(&m, &mut at);
        let sum_gamma: f64 = r.subproblems.iter().map(|s| s.gamma().evaluate(&at).unwrap()).sum();
        let weighted = r.weighted_slack(&m, &at).unwrap();
        worst_partition = worst_partition.max((sum_gamma - weighted).abs() / weighted.abs().max(1.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let tags: Vec<ConstraintTag> =
        (0..4).map(|i| ConstraintTag::Sinr(Link { tx: NodeId(i), rx: NodeId(i + 1), dest: NodeId(9) })).collect();
    let mut negative = 0usize;
    for _ in 0..10_000 {
        let alpha = rng.gen_range(1e-4..2.0);
        let sched = if rng.gen() { StepSchedule::Constant(alpha) } else { StepSchedule::Diminishing(alpha) };
        let mut m = MultiplierTable::zeros(tags.iter().copied());
        for _ in 0..rng.gen_range(1..40) {
            let slack: BTreeMap<ConstraintTag, f64> = tags.iter().map(|&t| (t, rng.gen_range(-1e3..1e3))).collect();
            m = multiplier_update(&m, &slack, sched).unwrap();
            negative += m.lambda.values().filter(|&&l| l < 0.0).count();
        }
    }
    let t = start.elapsed();
    let pass = worst_lin <= 1e-12 && worst_grad <= 1e-5 && worst_partition <= 1e-9 && negative == 0 && within(10.0, t);
    outcome(
        pass,
        format!(
            "linearization {worst_lin:.1e}, gradient rel {worst_grad:.1e}, partition rel {worst_partition:.1e}, \
             negative multipliers {negative}, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn unit_vectors() -> Outcome {
    let tag = ConstraintTag::Sinr(Link { tx: NodeId(0), rx: NodeId(1), dest: NodeId(1) });
    let step = |lambda: f64, alpha: f64, slack: f64| {
        let m = MultiplierTable { lambda: BTreeMap::from([(tag, lambda)]), t: 0 };
        multiplier_update(&m, &BTreeMap::from([(tag, slack)]), StepSchedule::Constant(alpha)).unwrap().lambda[&tag]
    };
    let got = [step(0.5, 0.1, 2.0), step(0.0, 0.1, 5.0), step(0.1, 0.1, -3.0)];
    let want = [0.3, 0.0, 0.4];
    let pass = got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-15);
    outcome(pass, format!("got {got:?}"))
}

/// Smallest exact SINR over the hops of every active route, relative to γ.
fn worst_route_sinr(sim: &SimulationState) -> f64 {
    let op = sim.operating_point();
    let mut worst = f64::INFINITY;
    for path in sim.measurement.paths.values() {
        for w in path.windows(2) {
            worst = worst.min(model_sinr(w[0], w[1], &op, &sim.env) / sim.directive.gamma);
        }
    }
    worst
}

fn oracle_check(cfg: &ScenarioConfig, tolerance: f64, round_limit: Option<u64>) -> (bool, String) {
    let o = centralized_oracle(cfg, 21).unwrap();
    let m = run_scenario(cfg, Scheme::Swarm, cfg.seed, ExecMode::Parallel).unwrap();
    let sim = &m.final_state;
    let power = sim.total_power();
    let gap = (power - o.objective).abs() / o.objective;
    let worst = worst_route_sinr(sim);
    let routed = sim.measurement.paths.len() == sim.topology.sessions.len();
    let conv = m.summary.convergence_round;
    let converged = conv.is_some_and(|r| round_limit.is_none_or(|l| r <= l));
    let pass = converged && routed && gap <= tolerance && worst >= 1.0 - 1e-3;
    let detail = format!(
        "converged at {} of {} rounds, power {power:.1} mW vs oracle {:.1} mW (gap {:.1}%), worst SINR/γ {worst:.5}",
        conv.map_or("never".to_string(), |r| r.to_string()),
        cfg.rounds,
        o.objective,
        gap * 100.0
    );
    (pass, detail)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (pass, detail) = oracle_check(&common::scenario("five_node_min_power.toml"), 0.10, Some(300));
    let t = start.elapsed();
    outcome(pass && within(120.0, t), format!("{detail}, {:.1} s", t.as_secs_f64()))
}

fn fixed_point() -> Outcome {
    let start = Instant::now();
    let cfg = common::scenario("two_node.toml");
    let m = run_scenario(&cfg, Scheme::Swarm, cfg.seed, ExecMode::Sequential).unwrap();
    let sim = &m.final_state;
    let env = &sim.env;
    let d2: f64 = (0..3).map(|a| (sim.topology.nodes[0].start.axis(a) - sim.topology.nodes[1].start.axis(a)).powi(2)).sum();
    let g = env.g0 * d2.max(env.d0 * env.d0).powf(-env.eta / 2.0);
    let target = sim.directive.gamma * env.noise_mw / g;
    let p = sim.powers()[0];
    let err = (p - target).abs() / target;
    let t = start.elapsed();
    outcome(
        err <= 0.02 && m.summary.convergence_round.is_some() && within(5.0, t),
        format!("p = {p:.4} mW, γN/G = {target:.4} mW ({:.3}% off), {:.2} s", err * 100.0, t.as_secs_f64()),
    )
}

fn reconfiguration_latency() -> Outcome {
    let cfg = common::scenario("scenario1_two_sessions.toml");
    let opts = cfg.emit_options(Scheme::Swarm).unwrap();
    let mut times = Vec::new();
    for _ in 0..10 {
        let start = Instant::now();
        let b = common::build(&cfg);
        let p: &NetworkControlProblem = &b.ncp;
        let r = relax(p, &p.binding_at(&b.op), opts.schedule).unwrap();
        let template = emit_template(p, &opts).unwrap();
        let mut sim = SimulationState::new(&b.topo, &b.env, &b.directive).unwrap();
        sim.dispatch(Some(&opts), cfg.decision_config()).unwrap();
        times.push(start.elapsed().as_secs_f64());
        assert!(!r.subproblems.is_empty() && !template.decls.is_empty());
    }
    times.sort_by(f64::total_cmp);
    let median = (times[4] + times[5]) / 2.0;
    outcome(median < 3.0, format!("{} nodes, median {:.1} ms over 10 runs", cfg.nodes.len(), median * 1e3))
}

fn scheme_comparison() -> Outcome {
    let start = Instant::now();
    let cfg = common::scenario("scenario1_two_sessions.toml");
    let c = compare_schemes(&cfg, &[Scheme::Swarm, Scheme::Br, Scheme::Nc], 10, ExecMode::Parallel).unwrap();
    let swarm = c.stats(Scheme::Swarm).unwrap();
    let br = c.stats(Scheme::Br).unwrap();
    let nc = c.stats(Scheme::Nc).unwrap();
    let wins = swarm.per_seed.iter().zip(&nc.per_seed).filter(|(s, n)| s > n).count();
    let t = start.elapsed();
    let pass = swarm.mean > br.mean && br.mean > nc.mean && wins >= 9 && within(600.0, t);
    outcome(
        pass,
        format!(
            "mean throughput swarm {:.0}, br {:.0}, nc {:.0} bit/s; swarm beats nc in {wins}/10 seeds, {:.1} s",
            swarm.mean,
            br.mean,
            nc.mean,
            t.as_secs_f64()
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Averages of `series` before and from the event round.
fn around_event(m: &RunMetrics, series: &[f64]) -> (f64, f64) {
    let e = m.event_rounds[0] as usize;
    (mean(&series[..e - 1]), mean(&series[e - 1..]))
}

fn behavior_switch() -> Outcome {
    let rate = common::scenario("scenario1_terminate_max_log_rate.toml");
    let power = common::scenario("scenario1_terminate_min_power.toml");
    let mr = run_scenario(&rate, Scheme::Swarm, rate.seed, ExecMode::Parallel).unwrap();
    let mp = run_scenario(&power, Scheme::Swarm, power.seed, ExecMode::Parallel).unwrap();
    let (s2_pre, s2_post) = around_event(&mr, &mr.session_series(2));
    let (p_pre, p_post) = around_event(&mp, &mp.power_series());
    let shape = mr.event_rounds == [180] && mp.event_rounds == [180] && rate.rounds == 360 && power.rounds == 360;
    outcome(
        shape && s2_post > s2_pre && p_post <= 1.01 * p_pre,
        format!(
            "max-log-rate: session 2 {s2_pre:.0} -> {s2_post:.0} bit/s; min-power: total {p_pre:.1} -> {p_post:.1} mW"
        ),
    )
}

const SCENARIOS: [&str; 13] = [
    "five_node_lossy.toml",
    "five_node_min_power.toml",
    "scenario1_switch.toml",
    "scenario1_terminate_max_log_rate.toml",
    "scenario1_terminate_min_power.toml",
    "scenario1_two_sessions.toml",
    "scenario2_dense.toml",
    "scenario3_open_space.toml",
    "scenario4_relay_chain.toml",
    "scenario5_recovery.toml",
    "scenario6_offloading.toml",
    "three_node_chain.toml",
    "two_node.toml",
];

fn codegen() -> Outcome {
    let mut round_trips = 0;
    let mut i = 0usize;
    while i < 200 {
        let p = match i % 4 {
            0 | 1 => common::build(&common::scenario(SCENARIOS[i % SCENARIOS.len()])).ncp,
            2 => common::random_instance(i as u64, ObjectiveTemplate::MinPower).ncp,
            _ => common::random_instance(i as u64, ObjectiveTemplate::MaxLogRate).ncp,
        };
        let alpha = [0.05, 0.1, 0.5, 1.0, 2.5][i % 5];
        let opts = EmitOptions {
            schedule: if i % 2 == 0 { StepSchedule::Diminishing(alpha) } else { StepSchedule::Constant(alpha) },
            relinearize: 1 + (i % 7) as u32,
            proximal: [0.125, 0.25, 1.0, 2.0][i % 4],
            coordinated: i % 3 != 0,
        };
        let t = emit_template(&p, &opts).unwrap();
        let text = t.render();
        if parse_template(&text).is_ok_and(|back| back == t && back.render() == text) {
            round_trips += 1;
        }
        i += 1;
    }

    let mut leaks = 0;
    for file in SCENARIOS {
        let cfg = common::scenario(file);
        let text = common::template(&cfg).render();
        let words: Vec<&str> = text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).collect();
        leaks += cfg.nodes.iter().filter(|n| words.contains(&n.name.as_str())).count();
    }

    let sim = common::dispatched(&common::five_node_mobile());
    let set = |n: &str| common::plan(&sim, n).local_names().into_iter().collect::<Vec<_>>();
    let (a, c, e) = (set("A"), set("C"), set("E"));
    let fig = a == ["p_A", "x_A_C_E", "x_A_D_E"]
        && c == ["p_C", "pos_C_x", "pos_C_y", "pos_C_z"]
        && common::plan(&sim, "C").quantity("x_C_E_E").is_some_and(|q| !q.variable)
        && e.is_empty();
    outcome(
        round_trips == 200 && leaks == 0 && fig,
        format!("{round_trips}/200 round trips, {leaks} node names in templates, A {a:?}, C {c:?}, E {e:?}"),
    )
}

fn determinism() -> Outcome {
    let mut differing = Vec::new();
    let files = ["five_node_lossy.toml", "scenario1_two_sessions.toml", "scenario4_relay_chain.toml"];
    for file in files {
        let cfg = common::scenario(file);
        let csv = |mode| run_scenario(&cfg, cfg.scheme, cfg.seed, mode).unwrap().to_csv().unwrap();
        let first = csv(ExecMode::Parallel);
        if csv(ExecMode::Parallel) != first || csv(ExecMode::Sequential) != first {
            differing.push(file);
        }
    }
    outcome(differing.is_empty(), format!("{} scenarios replayed, differing: {differing:?}", files.len()))
}

fn robustness() -> Outcome {
    let start = Instant::now();
    let cfg = common::scenario("five_node_lossy.toml");
    let (pass, detail) = oracle_check(&cfg, 0.20, None);
    outcome(
        pass && cfg.channel.loss == 0.3,
        format!("q = {}: {detail}, {:.1} s", cfg.channel.loss, start.elapsed().as_secs_f64()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("math core", math_core),
        ("multiplier update examples", unit_vectors),
        ("oracle equivalence", oracle_equivalence),
        ("two-node fixed point", fixed_point),
        ("reconfiguration latency", reconfiguration_latency),
        ("scheme comparison", scheme_comparison),
        ("behavior switch", behavior_switch),
        ("codegen", codegen),
        ("determinism", determinism),
        ("robustness under loss", robustness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("criterion {}: {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
