mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use swarmctl_core::expr::{parse_expression, Binding, DefaultNames, Env, Expression, ParamId, Symbol, VarId};

use common::gen::{binding, smooth_expr, VARS};

fn var(i: u32) -> Expression {
    Expression::var(VarId(i))
}

fn param(i: u32) -> Expression {
    Expression::param(ParamId(i))
}

fn central_difference(e: &Expression, b: &Binding, v: VarId) -> f64 {
    let h = 1e-6;
    let x = b.var(v).unwrap();
    let mut hi = b.clone();
    hi.set_var(v, x + h);
    let mut lo = b.clone();
    lo.set_var(v, x - h);
    (e.evaluate(&hi).unwrap() - e.evaluate(&lo).unwrap()) / (2.0 * h)
}

#[test]
fn quotient_with_noise_term() {
    let e = var(0) / (param(0) + var(1));
    let b = Binding::new().with_var(VarId(0), 1.0).with_param(ParamId(0), 0.1).with_var(VarId(1), 1.0);
    assert_relative_eq!(e.evaluate(&b).unwrap(), 1.0 / 1.1, epsilon = 1e-15);
    let d = e.differentiate(VarId(0));
    assert_relative_eq!(d.evaluate(&b).unwrap(), central_difference(&e, &b, VarId(0)), max_relative = 1e-8);
    assert_relative_eq!(d.evaluate(&b).unwrap(), 1.0 / 1.1, epsilon = 1e-15);
}

#[test]
fn square_expansion_underestimates_off_the_base_point() {
    let e = Expression::pow(var(0), 2.0);
    let lin = e.linearize_at(&Binding::new().with_var(VarId(0), 3.0)).unwrap();
    assert_eq!(lin.constant, 9.0);
    assert_eq!(lin.coeffs[&VarId(0)], 6.0);
    let at4 = Binding::new().with_var(VarId(0), 4.0);
    assert_eq!(lin.evaluate(&at4).unwrap(), 15.0);
    assert_eq!(e.evaluate(&at4).unwrap(), 16.0);
}

#[test]
fn parameters_have_zero_derivative() {
    let e = param(0) * param(1);
    assert!(e.differentiate(VarId(0)).is_zero());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn linearization_is_exact_at_the_base_point(e in smooth_expr(), b in binding()) {
        let lin = e.linearize_at(&b).unwrap();
        let exact = e.evaluate(&b).unwrap();
        prop_assert!((lin.evaluate(&b).unwrap() - exact).abs() <= 1e-12);
        prop_assert!((lin.to_expression().evaluate(&b).unwrap() - exact).abs() <= 1e-12);
    }

    #[test]
    fn derivatives_match_central_differences(e in smooth_expr(), b in binding(), v in 0..VARS) {
        let v = VarId(v);
        let symbolic = e.differentiate(v).evaluate(&b).unwrap();
        let numeric = central_difference(&e, &b, v);
        prop_assert!((symbolic - numeric).abs() <= 1e-5 * (1.0 + symbolic.abs()), "{symbolic} vs {numeric}");
    }

    #[test]
    fn differentiation_is_linear(a in smooth_expr(), c in smooth_expr(), b in binding(), v in 0..VARS) {
        let v = VarId(v);
        let whole = (&a + &c).differentiate(v).evaluate(&b).unwrap();
        let parts = a.differentiate(v).evaluate(&b).unwrap() + c.differentiate(v).evaluate(&b).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + parts.abs()));
    }

    #[test]
    fn simplification_preserves_values(e in smooth_expr(), b in binding()) {
        let raw = e.evaluate(&b).unwrap();
        let simple = e.simplify().evaluate(&b).unwrap();
        prop_assert!((raw - simple).abs() <= 1e-9 * (1.0 + raw.abs()));
    }

    #[test]
    fn canonical_text_round_trips(e in smooth_expr()) {
        let text = e.render(&DefaultNames);
        let mut resolve = |name: &str| -> Option<Symbol> {
            let (head, tail) = name.split_at(1);
            let i: u32 = tail.parse().ok()?;
            match head {
                "v" => Some(Symbol::Var(VarId(i))),
                "k" => Some(Symbol::Param(ParamId(i))),
                _ => None,
            }
        };
        let back = parse_expression(&text, &mut resolve).unwrap();
        prop_assert_eq!(back.render(&DefaultNames), text);
    }
}
