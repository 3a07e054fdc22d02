mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use swarmctl_core::codegen::{emit_template, library, parse_template, CodegenError, EmitOptions, TemplateScript};
use swarmctl_core::decompose::StepSchedule;
use swarmctl_core::expr::{DenseEnv, Env};
use swarmctl_core::ncp::ObjectiveTemplate;

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

fn names(v: &[&str]) -> BTreeSet<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn variable_sets_follow_the_role_rules() {
    let sim = common::dispatched(&common::five_node_mobile());
    assert_eq!(common::plan(&sim, "A").local_names(), names(&["p_A", "x_A_C_E", "x_A_D_E"]));

    let c = common::plan(&sim, "C");
    assert_eq!(c.local_names(), names(&["p_C", "pos_C_x", "pos_C_y", "pos_C_z"]));
    assert!(c.local("x_C_E_E").is_none());

    assert!(common::plan(&sim, "E").local_names().is_empty());
}

#[test]
fn held_relays_have_no_location_variables() {
    let sim = common::dispatched(&common::scenario("five_node_min_power.toml"));
    assert_eq!(common::plan(&sim, "C").local_names(), names(&["p_C"]));
    let t = common::template(&common::scenario("five_node_min_power.toml"));
    assert_eq!(t.class_of(library::LOC), None);
    assert!(t.render().contains(library::LOCATION));
}

#[test]
fn templates_never_name_nodes() {
    for file in SCENARIOS {
        let cfg = common::scenario(file);
        let text = common::template(&cfg).render();
        let words: BTreeSet<&str> =
            text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).filter(|w| !w.is_empty()).collect();
        for n in &cfg.nodes {
            assert!(!words.contains(n.name.as_str()), "{file}: template mentions node {}", n.name);
        }
    }
}

#[test]
fn same_structure_gives_the_same_template() {
    let opts = EmitOptions::default();
    for objective in [ObjectiveTemplate::MinPower, ObjectiveTemplate::MaxLogRate] {
        let first = emit_template(&common::random_instance(1, objective).ncp, &opts).unwrap();
        for seed in 2..6 {
            let other = emit_template(&common::random_instance(seed, objective).ncp, &opts).unwrap();
            assert_eq!(other.render(), first.render());
        }
    }
}

fn options(i: usize) -> EmitOptions {
    let alpha = [0.05, 0.1, 0.5, 1.0, 2.5][i % 5];
    EmitOptions {
        schedule: if i % 2 == 0 { StepSchedule::Diminishing(alpha) } else { StepSchedule::Constant(alpha) },
        relinearize: 1 + (i % 7) as u32,
        proximal: [0.125, 0.25, 1.0, 2.0][i % 4],
        coordinated: i % 3 != 0,
    }
}

fn corpus() -> Vec<TemplateScript> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < 200 {
        let p = match i % 4 {
            0 | 1 => common::build(&common::scenario(SCENARIOS[i % SCENARIOS.len()])).ncp,
            2 => common::random_instance(i as u64, ObjectiveTemplate::MinPower).ncp,
            _ => common::random_instance(i as u64, ObjectiveTemplate::MaxLogRate).ncp,
        };
        out.push(emit_template(&p, &options(i)).unwrap());
        i += 1;
    }
    out
}

#[test]
fn parse_inverts_render_on_the_corpus() {
    let corpus = corpus();
    assert_eq!(corpus.len(), 200);
    for t in &corpus {
        let text = t.render();
        let back = parse_template(&text).unwrap();
        assert_eq!(&back, t);
        assert_eq!(back.render(), text);
    }
}

#[test]
fn uncoordinated_templates_exchange_nothing() {
    let cfg = common::scenario("scenario1_two_sessions.toml");
    let b = common::build(&cfg);
    let t = emit_template(&b.ncp, &EmitOptions { coordinated: false, ..EmitOptions::default() }).unwrap();
    assert!(t.messages.is_empty());
    assert!(!t.objective.mentions(library::LAMBDA));
}

#[test]
fn min_power_share_is_the_node_power() {
    let cfg = common::five_node_mobile();
    let b = common::build(&cfg);
    let sim = common::dispatched(&cfg);
    let a = common::plan(&sim, "A");
    let binding = b.ncp.binding_at(&b.op);
    let vars: Vec<f64> = a.locals.iter().map(|v| binding.var(b.ncp.var_by_name(&v.name).unwrap()).unwrap()).collect();
    let env = DenseEnv { vars: &vars, params: &[] };
    let p_a = b.op.powers[b.topo.find("A").unwrap().index()];
    assert_eq!(a.share.evaluate(&env).unwrap(), p_a);
}

#[test]
fn undeclared_keywords_are_reported() {
    let t = common::template(&common::scenario("two_node.toml"));
    let text = t.render().replace(&format!("param {}\n", library::NOISE), "");
    match parse_template(&text) {
        Err(CodegenError::Undeclared(k)) => assert_eq!(k, library::NOISE),
        other => panic!("expected an undeclared keyword, got {other:?}"),
    }
}

#[test]
fn errors_carry_the_line_number() {
    let t = common::template(&common::scenario("two_node.toml"));
    let mut lines: Vec<String> = t.render().lines().map(String::from).collect();
    lines[2] = "schedule sometimes 0.5".into();
    match parse_template(&lines.join("\n")) {
        Err(CodegenError::SyntaxError { line, col, .. }) => assert_eq!((line, col), (3, 10)),
        other => panic!("expected a syntax error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn edited_templates_never_panic(drop in 0usize..40, dup in 0usize..40, junk in "[ -~]{0,12}") {
        let t = common::template(&common::scenario("scenario1_two_sessions.toml"));
        let mut lines: Vec<String> = t.render().lines().map(String::from).collect();
        let n = lines.len();
        lines.remove(drop % n);
        let copy = lines[dup % lines.len()].clone();
        lines.insert(dup % lines.len(), format!("{copy}{junk}"));
        if let Ok(parsed) = parse_template(&lines.join("\n")) {
            prop_assert!(parsed.validate().is_ok());
        }
    }
}
