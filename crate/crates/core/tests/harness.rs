mod common;

use approx::assert_relative_eq;
use swarmctl_core::harness::{
    centralized_oracle, compare_schemes, run_scenario, summarize, HarnessError, MetricsRow, ScenarioConfig, Scheme,
};
use swarmctl_core::netsim::ExecMode;

fn two_node_text() -> String {
    std::fs::read_to_string(common::scenario_path("two_node.toml")).unwrap()
}

fn config_error(text: &str) -> String {
    match ScenarioConfig::from_toml(text) {
        Err(HarnessError::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn malformed_configs_are_rejected() {
    let base = two_node_text();
    config_error(&base.replace("gamma = 0.5", "gamma = 0.5\ngamma_db = 3.0"));
    config_error(&base.replace("gamma = 0.5", ""));
    config_error(&base.replace("seed = 1", "seed = 1\ncolour = \"red\""));
    config_error(&base.replace("destination = \"B\"", "destination = \"Z\""));
    config_error(&base.replace("position = [20.0, 0.0, 2.0]", "position = [20.0, 0.0, 2.0]\nrole2 = 1"));
    config_error(&base.replace("rounds = 200", "rounds = 0"));
    let late = format!("{base}\n[[events]]\nkind = \"terminate_session\"\nround = 200\nsession = 1\n");
    assert!(config_error(&late).contains("event round"));
    match ScenarioConfig::load(&common::scenario_path("missing.toml")) {
        Err(HarnessError::Io(_)) => {}
        other => panic!("expected an io error, got {other:?}"),
    }
}

#[test]
fn threshold_in_decibels() {
    let cfg = ScenarioConfig::from_toml(&two_node_text().replace("gamma = 0.5", "gamma_db = 3.0")).unwrap();
    let d = cfg.directive.to_directive(cfg.channel.bandwidth_hz).unwrap();
    assert_relative_eq!(d.gamma, 1.995_262_314_968_879_5, epsilon = 1e-12);
}

#[test]
fn every_scenario_file_loads() {
    let dir = common::scenario_path("");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn csv_has_one_row_per_node_and_round() {
    let mut cfg = common::scenario("two_node.toml");
    cfg.rounds = 12;
    let m = run_scenario(&cfg, Scheme::Swarm, 1, ExecMode::Sequential).unwrap();
    let text = String::from_utf8(m.to_csv().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,node,power_mW,x,y,z,next_hop,session_id,rate_setpoint_bps,delivered_bps,lambda_max,converged_flag"
    );
    assert_eq!(lines.count(), 24);
    assert_eq!(m.rows[0].round, 1);
    assert_eq!(m.rows[0].node, "A");
    assert_eq!(m.rows[0].next_hop, "B");
    assert_eq!(m.rows[0].session_id, "1");
    assert_eq!(m.rows[1].next_hop, "-");
    assert_eq!(m.rows[23].round, 12);
    assert_eq!(m.rows[0].x, 0.0);
    assert_eq!(m.rows[0].z, 2.0);
}

fn row(round: u64, node: &str, power: f64, session: &str, delivered: f64, converged: bool) -> MetricsRow {
    MetricsRow {
        round,
        node: node.into(),
        power_mw: power,
        x: 0.0,
        y: 0.0,
        z: 0.0,
        next_hop: "-".into(),
        session_id: session.into(),
        rate_setpoint_bps: 0.0,
        delivered_bps: delivered,
        lambda_max: 0.0,
        converged_flag: u8::from(converged),
    }
}

#[test]
fn summary_averages_the_final_quarter() {
    let mut cfg = common::scenario("two_node.toml");
    cfg.rounds = 8;
    let mut rows = Vec::new();
    for r in 1..=8u64 {
        let x = r as f64;
        rows.push(row(r, "A", 10.0 * x, "1", 100.0 * x, r >= 4 && r != 5));
        rows.push(row(r, "B", 1.0, "", 0.0, r >= 3));
    }
    let s = summarize(&cfg, Scheme::Br, 9, &rows, &[]);
    // Rounds 7 and 8 form the last quarter.
    assert_relative_eq!(s.session_throughput[&1], 750.0, epsilon = 1e-12);
    assert_relative_eq!(s.throughput_bps, 750.0, epsilon = 1e-12);
    assert_relative_eq!(s.total_power_mw, 76.0, epsilon = 1e-12);
    assert_eq!(s.convergence_round, Some(6));
    assert_eq!(s.seed, 9);

    let text = s.render();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(
        keys,
        [
            "scenario",
            "scheme",
            "seed",
            "rounds",
            "throughput_bps",
            "throughput_bps.session_1",
            "total_power_mw",
            "convergence_round",
            "decomposition_time_s"
        ]
    );
    assert!(text.contains("scheme = br\n"));
    assert!(text.contains("convergence_round = 6\n"));

    rows.last_mut().unwrap().converged_flag = 0;
    let s = summarize(&cfg, Scheme::Br, 9, &rows, &[]);
    assert_eq!(s.convergence_round, None);
    assert!(s.render().contains("convergence_round = none\n"));
}

#[test]
fn events_restart_the_convergence_clock() {
    let mut cfg = common::scenario("two_node.toml");
    cfg.rounds = 8;
    let rows: Vec<MetricsRow> = (1..=8).map(|r| row(r, "A", 1.0, "1", 1.0, true)).collect();
    assert_eq!(summarize(&cfg, Scheme::Swarm, 1, &rows, &[]).convergence_round, Some(1));
    assert_eq!(summarize(&cfg, Scheme::Swarm, 1, &rows, &[5]).convergence_round, Some(5));
}

#[test]
fn oracle_on_a_single_link_picks_the_first_feasible_grid_point() {
    let cfg = common::scenario("two_node.toml");
    let o = centralized_oracle(&cfg, 21).unwrap();
    let env = cfg.env(cfg.seed);
    let g = env.g0 * 20f64.powf(-env.eta);
    let needed = 0.5 * env.noise_mw / g;
    let step = 1000.0 / 20.0;
    assert_relative_eq!(o.objective, (needed / step).ceil() * step, epsilon = 1e-9);
    assert_eq!(o.values.len(), 1);
    assert_eq!(o.grid_slack, step);
    assert_eq!(o.evaluated, 21);
}

#[test]
fn oracle_refuses_what_it_cannot_search() {
    assert!(matches!(centralized_oracle(&common::five_node_mobile(), 5), Err(HarnessError::TooLarge(_))));
    assert!(matches!(centralized_oracle(&common::scenario("two_node.toml"), 1), Err(HarnessError::Config(_))));
    assert!(matches!(
        centralized_oracle(&common::scenario("scenario2_dense.toml"), 3),
        Err(HarnessError::TooLarge(_))
    ));
}

#[test]
fn comparison_tabulates_each_scheme() {
    let mut cfg = common::scenario("two_node.toml");
    cfg.rounds = 20;
    let c = compare_schemes(&cfg, &[Scheme::Swarm, Scheme::Nc], 3, ExecMode::Parallel).unwrap();
    assert_eq!(c.seeds, vec![1, 2, 3]);
    for s in &c.stats {
        assert_eq!(s.per_seed.len(), 3);
        for (k, &v) in c.seeds.iter().zip(&s.per_seed) {
            let solo = run_scenario(&cfg, s.scheme, *k, ExecMode::Sequential).unwrap();
            assert_eq!(solo.summary.throughput_bps, v);
        }
        let mean = s.per_seed.iter().sum::<f64>() / 3.0;
        assert_relative_eq!(s.mean, mean, max_relative = 1e-12);
    }
    let swarm = c.stats(Scheme::Swarm).unwrap().mean;
    let nc = c.stats(Scheme::Nc).unwrap().mean;
    if nc > 0.0 {
        assert_relative_eq!(c.gain.unwrap(), (swarm - nc) / nc, max_relative = 1e-12);
    }
    let text = c.render();
    assert!(text.starts_with("seeds = 3\n"));
    assert!(text.contains("swarm.mean_throughput_bps = "));
    assert!(text.contains("nc.std_throughput_bps = "));
}

#[test]
fn terminate_events_are_recorded() {
    let mut cfg = common::scenario("scenario1_terminate_min_power.toml");
    cfg.rounds = 60;
    if let swarmctl_core::harness::EventConfig::TerminateSession { round, .. } = &mut cfg.events[0] {
        *round = 45;
    }
    let m = run_scenario(&cfg, Scheme::Swarm, 1, ExecMode::Sequential).unwrap();
    assert_eq!(m.event_rounds, vec![45]);
    let s1 = m.session_series(1);
    assert!(s1[..44].iter().any(|&v| v > 0.0));
    assert!(s1[44..].iter().all(|&v| v == 0.0));
    assert!(m.summary.decomposition_time_s > 0.0);
}
